"""Quantum channels in Kraus form.

Covers the freedom in choosing Kraus operators (unitary remixing), the
entropy exchange, a local search for the smallest entropy defect over Kraus
representations, and the block decomposition of ``phi^{(x) l}`` into a
mixture of channels with few Kraus operators each, built on top of
:func:`qmd.separation.build_separation`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize

from .errors import ValidationError
from .infomeasures import _weighted_entropy, von_neumann_entropy
from .numerics import (
    check_dense,
    haar_unitary,
    herm,
    lowrank_trace_norm,
    matrix_from_json,
    matrix_to_json,
    polar,
    sqrtm_psd,
    support_projector,
    tensor,
    trace_norm,
)
from .quantum import Povm, chrysler_povm, density
from .separation import SeparationParams, SeparationResult, build_separation
from .typicality import string_digits

KRAUS_TOL = 1e-9


@dataclass
class KrausChannel:
    """Completely positive map ``sigma -> sum_j V_j sigma V_j^dagger``.

    ``kraus`` has shape (m, out_dim, in_dim). With ``check=True`` trace
    preservation is verified to ``KRAUS_TOL``.
    """

    kraus: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        k = np.asarray(self.kraus, dtype=complex)
        if k.ndim == 2:
            k = k[None]
        if k.ndim != 3 or k.shape[0] == 0:
            raise ValidationError(f"Kraus operators must be a non-empty (m, out, in) stack, got {k.shape}")
        self.kraus = k
        if self.check:
            self.validate()

    @property
    def in_dim(self) -> int:
        return self.kraus.shape[2]

    @property
    def out_dim(self) -> int:
        return self.kraus.shape[1]

    def __len__(self) -> int:
        return self.kraus.shape[0]

    def completeness_error(self, support=None) -> float:
        """Largest deviation of ``sum V^dagger V`` from the identity, optionally
        compressed to the range of the projector ``support``."""
        total = np.einsum("jab,jac->bc", self.kraus.conj(), self.kraus)
        target = np.eye(self.in_dim)
        if support is not None:
            total = support @ total @ support
            target = support
        return float(np.abs(total - target).max())

    def validate(self, tol: float = KRAUS_TOL) -> None:
        err = self.completeness_error()
        if err > tol:
            raise ValidationError(f"Kraus operators not trace preserving (error {err:.3e})")

    def to_json(self) -> dict:
        return {
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "kraus": [matrix_to_json(v) for v in self.kraus],
        }

    @classmethod
    def from_json(cls, obj) -> "KrausChannel":
        try:
            ops = np.array([matrix_from_json(v) for v in obj["kraus"]])
            shape = (int(obj["out_dim"]), int(obj["in_dim"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed channel JSON: {exc}") from exc
        if ops.ndim != 3 or ops.shape[1:] != shape:
            raise ValidationError("Kraus operator shapes do not match in_dim/out_dim")
        return cls(ops)


@dataclass
class Instrument(KrausChannel):
    """Kraus channel whose operators carry outcome labels."""

    labels: tuple = ()

    def __post_init__(self):
        super().__post_init__()
        if not self.labels:
            self.labels = tuple(range(len(self)))
        self.labels = tuple(self.labels)
        if len(self.labels) != len(self):
            raise ValidationError("one label per Kraus operator required")


# --- action ------------------------------------------------------------------------------


def apply(ch: KrausChannel, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (ch.in_dim, ch.in_dim):
        raise ValidationError(f"state of shape {rho.shape} does not fit input dimension {ch.in_dim}")
    return herm(np.einsum("jab,bc,jdc->ad", ch.kraus, rho, ch.kraus.conj()))


def apply_extended(ch: KrausChannel, psi) -> np.ndarray:
    """``(phi (x) id)(|psi><psi|)`` for a vector on ``in (x) ref``, input first."""
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    if psi.size % ch.in_dim:
        raise ValidationError("vector length is not a multiple of the input dimension")
    mat = psi.reshape(ch.in_dim, -1)
    vecs = (ch.kraus @ mat).reshape(len(ch), -1)
    return herm(vecs.T @ vecs.conj())


def povm_of(ch: KrausChannel) -> Povm:
    """The POVM ``a_j = V_j^dagger V_j`` of a representation."""
    eff = np.einsum("jab,jac->jbc", ch.kraus.conj(), ch.kraus)
    labels = ch.labels if isinstance(ch, Instrument) else None
    return Povm(herm(eff), labels)


def kraus_remix(ch: KrausChannel, u) -> KrausChannel:
    """``V'_J = sum_j U_Jj V_j``. ``u`` may be an isometry with more rows than
    Kraus operators, which yields a longer representation of the same map."""
    u = np.asarray(u, dtype=complex)
    if u.ndim != 2 or u.shape[1] != len(ch):
        raise ValidationError(f"remix matrix must have {len(ch)} columns")
    if np.abs(u.conj().T @ u - np.eye(len(ch))).max() > 1e-9:
        raise ValidationError("remix matrix is not an isometry")
    return KrausChannel(np.einsum("Jj,jab->Jab", u, ch.kraus), check=False)


def choi(ch: KrausChannel) -> np.ndarray:
    """``sum_j (V_j (x) 1)|I><I|(V_j (x) 1)^dagger`` with the unnormalized ``|I>``."""
    return apply_extended(ch, np.eye(ch.in_dim).reshape(-1))


def choi_distance(a: KrausChannel, b: KrausChannel) -> float:
    if (a.in_dim, a.out_dim) != (b.in_dim, b.out_dim):
        raise ValidationError("channels act between different spaces")
    return float(np.abs(choi(a) - choi(b)).max())


# --- entropy exchange ---------------------------------------------------------------


def exchange_matrix(ch: KrausChannel, rho) -> np.ndarray:
    """``W_jk = Tr(V_j rho V_k^dagger)``."""
    rho = density(rho)
    return herm(np.einsum("jab,bc,kac->jk", ch.kraus, rho, ch.kraus.conj()))


def entropy_exchange(ch: KrausChannel, rho) -> float:
    return von_neumann_entropy(exchange_matrix(ch, rho))


def canonical_kraus(ch: KrausChannel, rho) -> KrausChannel:
    """Representation whose exchange matrix is diagonal, so that the outcome
    distribution ``lambda`` has entropy equal to the entropy exchange."""
    _, vecs = np.linalg.eigh(exchange_matrix(ch, rho))
    return kraus_remix(ch, vecs[:, ::-1].conj().T)


def outcome_distribution(ch: KrausChannel, rho) -> np.ndarray:
    return np.clip(np.diagonal(exchange_matrix(ch, rho)).real, 0.0, None)


def representation_information(ch: KrausChannel, rho) -> float:
    """``I(lambda; rhohat)`` of the ensemble induced by this representation."""
    rho = density(rho)
    return _defect_of_weighted(rho, _induced_weighted(ch, rho))


def _induced_weighted(ch: KrausChannel, rho: np.ndarray) -> np.ndarray:
    root = sqrtm_psd(rho)
    x = ch.kraus @ root
    return np.einsum("jab,jac->jbc", x.conj(), x)


def _defect_of_weighted(rho: np.ndarray, weighted: np.ndarray) -> float:
    return von_neumann_entropy(rho) - _weighted_entropy(weighted)


@dataclass(frozen=True)
class SigmaResult:
    """Outcome of :func:`sigma_search`. ``value`` is an upper bound on the
    minimum over representations, not a certified minimum."""

    value: float
    unitary: np.ndarray = field(repr=False)
    max_seen: float
    canonical_value: float
    entropy_exchange: float
    restarts: int
    restart_values: tuple = ()


def _hermitian_from(x: np.ndarray, m: int) -> np.ndarray:
    h = np.zeros((m, m), dtype=complex)
    iu = np.triu_indices(m, 1)
    n_off = iu[0].size
    h[iu] = x[:n_off] + 1j * x[n_off: 2 * n_off]
    h = h + h.conj().T
    h[np.diag_indices(m)] = x[2 * n_off:]
    return h


def sigma_search(ch: KrausChannel, rho, restarts: int = 4, seed: int = 0, pad: int = 0) -> SigmaResult:
    """Local search for the smallest ``I(lambda; rhohat)`` over Kraus representations.

    Representations are parameterized as ``expm(iH) U0`` acting on the Kraus
    list (padded by ``pad`` zero operators), with starting points the given
    representation, the canonical one, and ``restarts`` Haar-random remixes
    drawn from a stream keyed by ``(seed, restart)``. Ties go to the lowest
    restart index.
    """
    rho = density(rho)
    m = len(ch) + pad
    ops = np.concatenate([ch.kraus, np.zeros((pad,) + ch.kraus.shape[1:], dtype=complex)])
    base = KrausChannel(ops, check=False)
    h_rho = von_neumann_entropy(rho)
    root = sqrtm_psd(rho)
    x = base.kraus @ root
    blocks = np.einsum("jab,kac->jkbc", x.conj(), x)  # sqrt(rho) V_j^dagger V_k sqrt(rho)

    def info(u: np.ndarray) -> float:
        w = np.einsum("Jj,Jk,jkbc->Jbc", u.conj(), u, blocks)
        return h_rho - _weighted_entropy(w)

    _, vecs = np.linalg.eigh(exchange_matrix(base, rho))
    starts = [np.eye(m, dtype=complex), vecs[:, ::-1].conj().T]
    for r in range(restarts):
        starts.append(haar_unitary(m, np.random.default_rng(np.random.SeedSequence([int(seed), r]))))

    seen_max = -np.inf
    results = []
    for u0 in starts:

        def f(p, u0=u0):
            return info(expm(1j * _hermitian_from(p, m)) @ u0)

        x0 = np.zeros(m * m)
        v0 = f(x0)
        opt = minimize(f, x0, method="L-BFGS-B")
        u = expm(1j * _hermitian_from(opt.x, m)) @ u0
        val = info(u)
        if val > v0:
            val, u = v0, u0
        seen_max = max(seen_max, v0, val)
        results.append((val, u))
    best = min(range(len(results)), key=lambda i: (results[i][0], i))
    return SigmaResult(
        value=float(results[best][0]),
        unitary=results[best][1],
        max_seen=float(seen_max),
        canonical_value=float(info(starts[1])),
        entropy_exchange=entropy_exchange(ch, rho),
        restarts=len(starts),
        restart_values=tuple(float(v) for v, _ in results),
    )


# --- named channels -------------------------------------------------------------------


def identity_channel(d: int) -> KrausChannel:
    return KrausChannel(np.eye(d, dtype=complex)[None])


def unitary_channel(u) -> KrausChannel:
    return KrausChannel(np.asarray(u, dtype=complex)[None])


def dephasing_channel(d: int) -> KrausChannel:
    return KrausChannel(np.array([np.diag(np.eye(d)[k]) for k in range(d)], dtype=complex))


def depolarizing_channel(d: int, p: float) -> KrausChannel:
    """``rho -> (1-p) rho + p I/d`` via the d^2 clock-and-shift operators."""
    if not 0 <= p <= 1:
        raise ValidationError("depolarizing parameter must lie in [0, 1]")
    shift = np.roll(np.eye(d), 1, axis=0)
    clock = np.diag(np.exp(2j * np.pi * np.arange(d) / d))
    ops = []
    for a in range(d):
        for b in range(d):
            w = np.linalg.matrix_power(shift, a) @ np.linalg.matrix_power(clock, b)
            c = 1 - p + p / d**2 if a == b == 0 else p / d**2
            ops.append(np.sqrt(c) * w)
    return KrausChannel(np.array(ops, dtype=complex))


def luders_instrument(a: Povm) -> Instrument:
    """Instrument with Kraus operators ``sqrt(a_j)``."""
    return Instrument(np.array([sqrtm_psd(e) for e in a.effects]), labels=a.labels)


def qc_channel(a: Povm) -> Instrument:
    """Measure a rank-one POVM and record the outcome: ``V_j = |j><phi_j|``
    with ``a_j = |phi_j><phi_j|``. The output dimension is the outcome count."""
    m = len(a)
    ops = np.zeros((m, m, a.dim), dtype=complex)
    for j, e in enumerate(a.effects):
        vals, vecs = np.linalg.eigh(herm(e))
        if np.sum(vals > 1e-12 * max(1.0, vals[-1])) > 1:
            raise ValidationError("qc_channel needs rank-one effects")
        ops[j, j] = np.sqrt(max(vals[-1], 0.0)) * vecs[:, -1].conj()
    return Instrument(ops, labels=a.labels)


def random_channel(d_in: int, d_out: int, m: int, rng: np.random.Generator) -> KrausChannel:
    """Kraus operators cut from a Haar-random isometry into ``C^m (x) C^d_out``."""
    if m * d_out < d_in:
        raise ValidationError("too few Kraus operators for a trace-preserving map")
    iso = haar_unitary(m * d_out, rng)[:, :d_in]
    return KrausChannel(iso.reshape(m, d_out, d_in))


# --- block decomposition -------------------------------------------------------------


@dataclass
class ChannelDecomposition:
    """Mixture ``Phi = sum_nu x_nu Phi^(nu)`` approximating ``phi^{(x) l}``.

    ``owners[nu][i]`` is the outcome string whose polar unitary builds Kraus
    operator ``i`` of component ``nu``; ``-1`` marks the extra operators that
    complete a component when the output space is smaller than the input.
    """

    channel: KrausChannel
    separation: SeparationResult
    components: list
    weights: np.ndarray
    owners: list
    co_star_error: float
    string_bound: float
    estimate: float
    support: np.ndarray = field(repr=False)

    @property
    def l(self) -> int:
        return self.separation.params.l

    @property
    def M(self) -> int:
        return self.separation.params.M

    @property
    def N(self) -> int:
        return self.separation.params.N

    def kraus_counts(self) -> list:
        return [len(c) for c in self.components]

    def completeness_errors(self) -> list:
        return [c.completeness_error(self.support) for c in self.components]

    def apply(self, state) -> np.ndarray:
        return sum(x * apply(c, state) for x, c in zip(self.weights, self.components))

    def target_apply(self, state) -> np.ndarray:
        return apply(block_channel(self.channel, self.l), state)


def block_channel(ch: KrausChannel, l: int) -> KrausChannel:
    """``phi^{(x) l}`` with Kraus operators in lexicographic string order."""
    check_dense(ch.in_dim**l * ch.out_dim**l, "block channel")
    ops = [tensor(*[ch.kraus[x] for x in s]) for s in string_digits(len(ch), l)]
    return KrausChannel(np.array(ops), check=False)


def _purified_vectors(ops: np.ndarray, omega_sqrt: np.ndarray) -> np.ndarray:
    """Columns ``vec(K sqrt(omega))``: Kraus action on the canonical purification."""
    return (ops @ omega_sqrt).reshape(len(ops), -1).T


def _signed_trace_norm(vecs: np.ndarray, coeffs: np.ndarray) -> float:
    if vecs.shape[1] == 0:
        return 0.0
    if vecs.shape[1] <= vecs.shape[0]:
        return float(lowrank_trace_norm(vecs, coeffs))
    return trace_norm(herm((vecs * coeffs) @ vecs.conj().T))


def _canonical_gap(rho_hat: np.ndarray, p_hat: np.ndarray) -> float:
    r = sqrtm_psd(rho_hat).reshape(-1)
    p = sqrtm_psd(p_hat).reshape(-1)
    return _signed_trace_norm(np.stack([r, p], axis=1), np.array([1.0, -1.0]))


def decompose_channel(ch: KrausChannel, rho, params: SeparationParams) -> ChannelDecomposition:
    """Mixture of channels with at most ``M`` Kraus operators each whose
    average approximates ``phi^{(x) l}`` on the canonical purification of
    ``rho^{(x) l}``.

    Component Kraus operators satisfy ``W sqrt(omega) = U_{j^l} sqrt(Y_{j^l})``
    on the support of ``omega``, with ``Y`` the sandwiched effects of the
    separation of ``povm_of(ch)`` and ``U_j`` the polar unitaries of
    ``V_j sqrt(rho)``; they vanish off that support. The fill-up remainder is
    merged into the first sampled string of each component. When
    ``out_dim < in_dim`` the polar factors are co-isometries and the
    component is completed by extra measure-and-prepare operators.
    """
    rho = density(rho)
    if rho.shape[0] != ch.in_dim:
        raise ValidationError("state does not match the channel input")
    l = params.l
    check_dense(ch.in_dim**l * ch.out_dim**l, "channel decomposition")
    sep = build_separation(rho, povm_of(ch), params)
    f = sep.frame
    root = sqrtm_psd(rho)
    unitaries = np.array([polar(v @ root)[0] for v in ch.kraus])
    digits = string_digits(len(ch), l)
    w_inv = f.omega_inv_sqrt
    supp = support_projector(f.omega)
    omega_sqrt = f.omega_sqrt
    d_out = ch.out_dim**l

    comps, owners = [], []
    sandwiched_total: dict = {}
    for nu, comp in enumerate(sep.components):
        ys = sep.component_sandwiched(nu)
        if sep.sentinel is not None and sep.sentinel in ys:
            ys[comp.fill_index] = ys.get(comp.fill_index, 0) + ys.pop(sep.sentinel)
        ops, own = [], []
        for j in sorted(ys):
            u = tensor(*[unitaries[x] for x in digits[j]])
            ops.append(u @ sqrtm_psd(ys[j]) @ w_inv)
            own.append(j)
            sandwiched_total[j] = sandwiched_total.get(j, 0) + ys[j] / len(sep.components)
        ops = np.array(ops)
        deficit = herm(supp - np.einsum("jab,jac->bc", ops.conj(), ops))
        vals, vecs = np.linalg.eigh(deficit)
        extra = [np.sqrt(v) * np.outer(np.eye(d_out)[0], vecs[:, i].conj())
                 for i, v in enumerate(vals) if v > 1e-12]
        if extra:
            ops = np.concatenate([ops, np.array(extra)])
            own += [-1] * len(extra)
        comps.append(KrausChannel(ops, check=False))
        owners.append(own)
    weights = sep.weights

    # (CO*) on the canonical purification (sqrt(omega) (x) 1)|I>
    target_ops = np.array([tensor(*[ch.kraus[x] for x in s]) for s in digits])
    cols = [_purified_vectors(target_ops, omega_sqrt)]
    coeffs = [np.ones(len(target_ops))]
    for x, c in zip(weights, comps):
        cols.append(_purified_vectors(c.kraus, omega_sqrt))
        coeffs.append(np.full(len(c), -x))
    co_star = 0.5 * _signed_trace_norm(np.concatenate(cols, axis=1), np.concatenate(coeffs))

    # per-string triangle bound and its two-term estimate
    string_bound, estimate = 0.0, 0.0
    extra_mass = 0.0
    for nu, (c, own) in enumerate(zip(comps, owners)):
        own = np.asarray(own)
        extra_mass += weights[nu] * float(np.einsum("jab,jab->", c.kraus[own < 0], c.kraus[own < 0].conj()).real
                                          if np.any(own < 0) else 0.0)
    lam = f.lam
    for j in range(f.n_strings):
        v = cols[0][:, j: j + 1]
        ws, cs = [v], [np.ones(1)]
        for nu, (c, own) in enumerate(zip(comps, owners)):
            sel = np.flatnonzero(np.asarray(own) == j)
            if sel.size:
                ws.append(_purified_vectors(c.kraus[sel], omega_sqrt))
                cs.append(np.full(sel.size, -weights[nu]))
        string_bound += 0.5 * _signed_trace_norm(np.concatenate(ws, axis=1), np.concatenate(cs))
        y = sandwiched_total.get(j)
        big_lam = float(np.trace(y).real) if y is not None else 0.0
        if lam[j] > 0 and big_lam > 0:
            gap = min(2.0, _canonical_gap(f.rho_hat(j), y / big_lam))
            estimate += 0.5 * (abs(lam[j] - big_lam) + lam[j] * gap)
        else:
            estimate += 0.5 * (lam[j] + big_lam)
    string_bound += 0.5 * extra_mass
    estimate += 0.5 * extra_mass

    return ChannelDecomposition(ch, sep, comps, weights, owners, float(co_star),
                                float(string_bound), float(estimate), supp)


def co_error(decomp: ChannelDecomposition, s_effects) -> float:
    """(CO) value ``sum_k 1/2 |phi(q_k sigma_k) - Phi(q_k sigma_k)|_1`` for the
    source ``q_k sigma_k = sqrt(omega) S_k sqrt(omega)``."""
    f = decomp.separation.frame
    target = block_channel(decomp.channel, decomp.l)
    total = 0.0
    for s in np.asarray(s_effects):
        piece = f.omega_sqrt @ s @ f.omega_sqrt
        total += 0.5 * trace_norm(apply(target, piece) - decomp.apply(piece))
    return total


def chrysler_channel() -> Instrument:
    """Qubit measurement of the five pentagon states with a classical output register."""
    return qc_channel(chrysler_povm())

