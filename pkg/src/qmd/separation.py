"""Randomized separation of a block measurement into extrinsic and intrinsic data.

Given a state ``rho`` and a POVM ``a``, :func:`build_separation` samples
``N`` sub-POVMs on outcome strings ``[m]^l``, each supported on at most
``M`` strings, whose uniform mixture approximates ``a^{(x) l}`` in the
sandwiched trace norm (:func:`cm_error`).

All string-indexed work happens in the sandwiched frame
``Y = sqrt(omega) A sqrt(omega)`` with ``omega = rho^{(x) l}``. In that frame
the product POVM reads ``lambda_{j^l} rhohat_{j^l}`` and the construction
only ever adds multiples of the operators ``xi_{j^l}``.

Two evaluation back ends are used:

* product mode, when every projector in the definition of ``xi`` acts
  trivially so that ``xi_{j^l}`` equals the product state
  ``rhohat_{j^l}``. Sums over strings then factor letter by letter.
* factor mode otherwise: each ``xi_{j^l}`` is held as a thin factor
  ``H H^dagger``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateError, SizeLimitError, ValidationError
from .infomeasures import entropy_defect, shannon_entropy, von_neumann_entropy
from .numerics import (
    check_dense,
    default_cutoff,
    herm,
    inv_sqrtm_psd,
    lowrank_trace_norm,
    matrix_from_json,
    matrix_to_json,
    partial_trace,
    sqrtm_psd,
    tensor,
    trace_norm,
)
from .quantum import (
    Ensemble,
    Povm,
    density,
    dual_povm,
    induced_ensemble,
    random_ensemble_for,
    random_povm,
)
from .typicality import (
    cond_mask_table,
    eigen_symbols,
    is_typical_counts,
    letter_counts,
    string_digits,
    typical_projector,
)

DEFAULT_EPSILON = 0.05
DEFAULT_C1 = 3.0
DEFAULT_C2 = -1.0
ENUM_LIMIT = 10**7
FACTOR_LIMIT = 2 * 10**7  # complex entries held by factor mode
_POVM_TOL = 1e-9


# --- parameters ------------------------------------------------------------------


def default_delta(m: int, d: int, epsilon: float) -> float:
    """Typicality width ``m sqrt(2d/epsilon)`` used by the construction."""
    return m * math.sqrt(2.0 * d / epsilon)


def rate_sizes(info: float, h_lambda: float, l: int, c1: float, c2: float) -> tuple[int, int]:
    """``M = ceil(2^(l I + c1 sqrt l))`` and ``N = ceil(2^(l (H - I) + c2 sqrt l))``."""
    root = math.sqrt(l)
    m_exp = l * info + c1 * root
    n_exp = l * (h_lambda - info) + c2 * root
    if max(m_exp, n_exp) > 62:
        raise SizeLimitError(f"support sizes 2^{m_exp:.1f}, 2^{n_exp:.1f} are out of reach")
    return max(1, math.ceil(2.0**m_exp - 1e-9)), max(1, math.ceil(2.0**n_exp - 1e-9))


@dataclass(frozen=True)
class SeparationParams:
    """Inputs of :func:`build_separation`.

    ``delta``, ``M`` and ``N`` default to ``None`` and are filled in by
    :meth:`resolve` from the rates of the induced ensemble and the margins
    ``margin_c1`` / ``margin_c2``. ``fill`` selects where the missing operator
    weight of each sub-POVM goes: ``"first"`` (lexicographically first
    supported string) or ``"sentinel"`` (an extra outcome).
    """

    l: int
    epsilon: float = DEFAULT_EPSILON
    delta: float | None = None
    M: int | None = None
    N: int | None = None
    margin_c1: float = DEFAULT_C1
    margin_c2: float = DEFAULT_C2
    seed: int = 0
    fill: str = "first"

    def __post_init__(self):
        if int(self.l) != self.l or self.l < 1:
            raise ValidationError("l must be a positive integer")
        if not 0 < self.epsilon < 1:
            raise ValidationError("epsilon must lie in (0, 1)")
        if self.delta is not None and self.delta < 0:
            raise ValidationError("delta must be nonnegative")
        if self.M is not None and self.M < 1 or self.N is not None and self.N < 1:
            raise ValidationError("M and N must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if self.fill not in ("first", "sentinel"):
            raise ValidationError("fill must be 'first' or 'sentinel'")

    def resolve(self, ens: Ensemble) -> "SeparationParams":
        info = entropy_defect(ens)
        h = shannon_entropy(ens.probs)
        m_def, n_def = rate_sizes(info, h, self.l, self.margin_c1, self.margin_c2)
        return replace(
            self,
            delta=default_delta(len(ens), ens.dim, self.epsilon) if self.delta is None else float(self.delta),
            M=m_def if self.M is None else int(self.M),
            N=n_def if self.N is None else int(self.N),
        )


# --- letter-wise contractions --------------------------------------------------------


def product_sum(coef: np.ndarray, ops: np.ndarray, l: int) -> np.ndarray:
    """``sum_{j^l} coef[j^l] ops[j_1] (x) ... (x) ops[j_l]`` (strings lexicographic)."""
    m, d, _ = ops.shape
    t = np.asarray(coef, dtype=complex).reshape((m,) * l)
    for _ in range(l):
        t = np.tensordot(t, ops, axes=([0], [0]))
    order = [2 * k for k in range(l)] + [2 * k + 1 for k in range(l)]
    return t.transpose(order).reshape(d**l, d**l)


def product_traces(s: np.ndarray, ops: np.ndarray, l: int) -> np.ndarray:
    """``Tr(s (ops[j_1] (x) ... (x) ops[j_l]))`` for every string, flattened."""
    m, d, _ = ops.shape
    t = np.asarray(s, dtype=complex).reshape((d,) * (2 * l))
    for k in range(l):
        t = np.tensordot(t, ops, axes=([0, l - k], [2, 1]))
    return t.reshape(-1)


def _kron_rows(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1))
    for x in mats:
        out = np.kron(out, x)
    return out


# --- frame: everything that depends on (rho, a, l, delta, epsilon) only ----------------


class _Frame:
    """Typical sets, projectors and the ``xi`` operators for one block length."""

    def __init__(self, rho, a: Povm, l: int, delta: float, epsilon: float):
        self.rho = density(rho)
        self.a = a
        self.ens = induced_ensemble(self.rho, a)
        self.l, self.delta, self.epsilon = l, delta, epsilon
        self.d = d = self.rho.shape[0]
        self.m = m = len(a)
        self.D = D = d**l
        check_dense(D, "block operator")
        if m**l > ENUM_LIMIT:
            raise SizeLimitError(f"{m}^{l} outcome strings exceed the enumeration limit {ENUM_LIMIT}")
        self.n_strings = m**l
        self.letter_states = np.array(self.ens.states, dtype=complex)
        self.letter_probs = np.asarray(self.ens.probs, dtype=float)

        lam = _kron_rows([self.letter_probs[None, :]] * l)[0]
        self.lam = lam
        typ = np.zeros(self.n_strings, dtype=bool)
        step = 1 << 20
        for start in range(0, self.n_strings, step):
            stop = min(start + step, self.n_strings)
            s = string_digits(m, l, start, stop)
            typ[start:stop] = is_typical_counts(letter_counts(s, m), self.letter_probs, delta)
        typ &= lam > 0
        self.typical = typ
        self.typ_idx = np.flatnonzero(typ)
        self.S = float(lam[typ].sum())
        if self.S <= 0:
            raise DegenerateError("typical set of the outcome distribution is empty")
        self.L = lam[self.typ_idx] / self.S

        self.sym = eigen_symbols(self.rho)
        self.h_rho = von_neumann_entropy(self.rho)
        self.khat = self.sym.khat
        self.alpha = 2.0 ** (-l * self.h_rho - self.khat * d * delta * math.sqrt(l))
        self.pi_rho = typical_projector(self.rho, l, delta)

        root = sqrtm_psd(self.rho)
        self.omega = tensor(*([self.rho] * l))
        self.omega_inv_sqrt = tensor(*([inv_sqrtm_psd(self.rho)] * l))
        self.omega_sqrt = tensor(*([root] * l))

        self.mode = "product" if self._product_ok() else "factor"
        if self.mode == "product":
            self._setup_product()
        else:
            self._setup_factor()

    # -- mode selection
    def _letter_support(self, j: int):
        st = self.ens.states[j]
        es = eigen_symbols(st)
        keep = es.values > 0
        return es, keep

    def _product_ok(self) -> bool:
        pr = self.pi_rho
        if not np.all(pr.mask | (pr.weights == 0)):
            return False
        for j in range(self.m):
            if self.letter_probs[j] == 0:
                continue
            es, keep = self._letter_support(j)
            probs = es.symbol_probs[np.unique(es.groups[keep])]
            g = probs.size
            for n in range(1, self.l + 1):
                for cut in itertools.combinations(range(n + g - 1), g - 1):
                    b = (-1,) + cut + (n + g - 1,)
                    counts = np.array([b[i + 1] - b[i] - 1 for i in range(g)])
                    if not is_typical_counts(counts, probs, self.delta):
                        return False
        return True

    def _cutoff_projector(self, omega_prime: np.ndarray) -> tuple[np.ndarray, float, bool]:
        vals, vecs = np.linalg.eigh(herm(omega_prime))
        floor = default_cutoff(vals)
        cut = max(self.epsilon * self.alpha, floor)
        keep = vals >= cut
        gap = bool(np.any((vals > floor) & (vals < cut)))
        return vecs[:, keep], cut, gap

    def _setup_product(self):
        self.omega_prime = product_sum(self.lam * self.typical, self.letter_states, self.l)
        q, self.cut, gap = self._cutoff_projector(self.omega_prime)
        if gap:
            self.mode = "factor"
            self._setup_factor()
            return
        self.Q = q
        self.xi_trace = np.where(self.typical, 1.0, 0.0)
        self.max_xi_eig = float(
            np.max([np.max(np.linalg.eigvalsh(self.letter_states[j])) for j in range(self.m) if self.letter_probs[j] > 0])
            ** self.l
        )

    def _letter_factor_tables(self):
        """Support eigenvectors of each letter state padded to a common rank."""
        rmax = 1
        sup = []
        for j in range(self.m):
            es, keep = self._letter_support(j)
            sup.append((es, keep))
            rmax = max(rmax, int(keep.sum()))
        vecs = np.zeros((self.m, self.d, rmax), dtype=complex)
        weights = np.zeros((self.m, rmax))
        gmax = max(es.symbol_probs.size for es, _ in sup) + 1
        gmap = np.full((self.m, rmax), gmax - 1, dtype=np.int64)  # pad symbol has weight 0
        probs = np.zeros((self.m, gmax))
        for j, (es, keep) in enumerate(sup):
            r = int(keep.sum())
            vecs[j, :, :r] = es.vectors[:, keep]
            weights[j, :r] = es.values[keep]
            gmap[j, :r] = es.groups[keep]
            probs[j, : es.symbol_probs.size] = es.symbol_probs
        return vecs, weights, gmap, probs, rmax

    def _string_factors(self, strings: np.ndarray, vecs, weights, gmap, probs, rmax):
        b, l = strings.shape
        cols = rmax**l
        f = np.ones((b, 1, 1), dtype=complex)
        w = np.ones((b, 1))
        for k in range(l):
            v = vecs[strings[:, k]]  # (b, d, r)
            f = np.einsum("bxu,byv->bxyuv", f, v).reshape(b, f.shape[1] * self.d, -1)
            w = (w[:, :, None] * weights[strings[:, k]][:, None, :]).reshape(b, -1)
        full = f * np.sqrt(w)[:, None, :]
        mask = cond_mask_table(strings, gmap, probs, self.delta)
        assert mask.shape == (b, cols)
        return full, full * mask[:, None, :]

    def _setup_factor(self):
        vecs, weights, gmap, probs, rmax = self._letter_factor_tables()
        k = self.typ_idx.size
        if k * self.D * rmax**self.l > FACTOR_LIMIT:
            raise SizeLimitError("factor mode would hold too many operator entries; reduce l")
        strings = string_digits(self.m, self.l)[self.typ_idx].astype(np.int64)
        full, cond = self._string_factors(strings, vecs, weights, gmap, probs, rmax)
        pr = self.pi_rho
        if np.all(pr.mask):
            g = cond
        else:
            pcols = pr.columns()
            g = pcols @ (pcols.conj().T @ cond)
        lam_t = self.lam[self.typ_idx]
        self.omega_prime = herm(np.einsum("k,kar,kbr->ab", lam_t, g, g.conj()))
        q, self.cut, _ = self._cutoff_projector(self.omega_prime)
        self.Q = q
        h = q @ (q.conj().T @ g)
        self.full_factors = full
        self.xi_factors = h
        tr = np.zeros(self.n_strings)
        tr[self.typ_idx] = np.einsum("kar,kar->k", h.conj(), h).real
        self.xi_trace = tr
        gram = np.einsum("kar,kas->krs", h.conj(), h)
        self.max_xi_eig = float(np.max(np.linalg.eigvalsh(gram))) if k else 0.0

    # -- string-indexed operations
    def position(self, idx: np.ndarray) -> np.ndarray:
        """Row of each string index within the typical list (factor mode)."""
        return np.searchsorted(self.typ_idx, idx)

    def weighted_sum(self, idx: np.ndarray, coef: np.ndarray) -> np.ndarray:
        """``sum_j coef_j xi_j`` over the given string indices."""
        if self.mode == "product":
            full = np.zeros(self.n_strings)
            np.add.at(full, idx, coef)
            return product_sum(full, self.letter_states, self.l)
        h = self.xi_factors[self.position(idx)]
        return herm(np.einsum("k,kar,kbr->ab", coef, h, h.conj()))

    def xi(self, j: int) -> np.ndarray:
        if self.mode == "product":
            return self.rho_hat(j)
        if not self.typical[j]:
            return np.zeros((self.D, self.D), dtype=complex)
        h = self.xi_factors[self.position(np.array([j]))[0]]
        return h @ h.conj().T

    def rho_hat(self, j: int) -> np.ndarray:
        digits = string_digits(self.m, self.l, j, j + 1)[0]
        return tensor(*[self.letter_states[x] for x in digits])

    def rho_hat_traces(self, s: np.ndarray) -> np.ndarray:
        return product_traces(s, self.letter_states, self.l).real

    def xi_traces(self, s: np.ndarray) -> np.ndarray:
        if self.mode == "product":
            return self.rho_hat_traces(s) * self.typical
        out = np.zeros(self.n_strings)
        h = self.xi_factors
        out[self.typ_idx] = np.einsum("kar,ab,kbr->k", h.conj(), s, h).real
        return out

    def cm_terms(self, c: np.ndarray) -> np.ndarray:
        """``1/2 || lambda_j rhohat_j - c_j xi_j ||_1`` for every string."""
        if self.mode == "product":
            return 0.5 * np.abs(self.lam - c) * np.where(self.typical | (self.lam > 0), 1.0, 0.0)
        out = 0.5 * self.lam.copy()
        t = self.typ_idx
        full, h = self.full_factors, self.xi_factors
        factors = np.concatenate([full, h], axis=2)
        r1, r2 = full.shape[2], h.shape[2]
        coeffs = np.concatenate(
            [np.repeat(self.lam[t][:, None], r1, axis=1), np.repeat(-c[t][:, None], r2, axis=1)], axis=1
        )
        out[t] = 0.5 * lowrank_trace_norm(factors, coeffs)
        return out


# --- results ---------------------------------------------------------------------------


@dataclass
class Component:
    """One sampled sub-POVM: distinct strings, multiplicities and the scale
    applied to keep it below the identity."""

    strings: np.ndarray
    counts: np.ndarray
    scale: float
    lambda_max: float
    event_i: bool
    event_i_range: tuple

    @property
    def fill_index(self) -> int:
        return int(self.strings[0])


@dataclass(frozen=True)
class ComponentValidity:
    support: int
    min_coefficient: float
    min_letter_eigenvalue: float
    min_fill_eigenvalue: float
    completeness_error: float

    def valid(self, max_support: int, tol: float = 1e-9) -> bool:
        return (
            self.support <= max_support
            and self.min_coefficient >= 0
            and min(self.min_letter_eigenvalue, self.min_fill_eigenvalue) >= -tol
            and self.completeness_error <= tol
        )


@dataclass
class SeparationResult:
    """Output of :func:`build_separation`.

    ``components[nu]`` holds the sampled support of ``A^(nu)``; effects are
    ``A^(nu)_j = coef omega^-1/2 xi_j omega^-1/2`` plus the fill-up remainder.
    Weights are uniform, ``1/N``.
    """

    rho: np.ndarray
    povm: Povm
    params: SeparationParams
    components: list
    frame: _Frame = field(repr=False)
    coef_total: np.ndarray = field(repr=False)
    fill_ops: dict = field(repr=False)
    event_ii: bool = False
    cm_error: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def weights(self) -> np.ndarray:
        return np.full(len(self.components), 1.0 / len(self.components))

    @property
    def sentinel(self) -> int | None:
        return self.frame.n_strings if self.params.fill == "sentinel" else None

    @property
    def bound_error(self) -> float:
        e = self.params.epsilon
        return 2 * e + math.sqrt(2 * e) + math.sqrt(6 * e)

    def component_coef(self, nu: int) -> np.ndarray:
        f = self.frame
        c = self.components[nu]
        return c.scale * f.S / (1 + self.params.epsilon) * c.counts / self.params.M

    def fill_target(self, nu: int) -> int:
        return self.sentinel if self.sentinel is not None else self.components[nu].fill_index

    # -- dense views (small l)
    def outcome_labels(self) -> tuple:
        labels = [tuple(int(x) for x in s) for s in string_digits(self.frame.m, self.frame.l)]
        if self.sentinel is not None:
            labels.append("fill")
        return tuple(labels)

    def component_sandwiched(self, nu: int) -> dict:
        """Nonzero ``sqrt(omega) A^(nu)_j sqrt(omega)`` keyed by outcome index."""
        f = self.frame
        c = self.components[nu]
        coef = self.component_coef(nu)
        out = {int(j): w * f.xi(int(j)) for j, w in zip(c.strings, coef)}
        t = self.fill_target(nu)
        remainder = f.omega - f.weighted_sum(c.strings, coef)
        out[t] = out.get(t, 0) + remainder
        return out

    def component_povm(self, nu: int) -> Povm:
        f = self.frame
        check_dense(f.D * (f.n_strings + 1), "dense POVM export")
        n_out = f.n_strings + (1 if self.sentinel is not None else 0)
        eff = np.zeros((n_out, f.D, f.D), dtype=complex)
        w = f.omega_inv_sqrt
        for j, y in self.component_sandwiched(nu).items():
            eff[j] = w @ y @ w
        comp = np.eye(f.D) - w @ f.omega @ w
        eff[self.fill_target(nu)] += comp
        return Povm(herm(eff), self.outcome_labels(), check=False)

    def component_validity(self, nu: int) -> "ComponentValidity":
        """POVM check of component ``nu`` without the dense export.

        Sampled effects are ``coef_j omega^-1/2 xi_j omega^-1/2`` with ``xi_j``
        a product of letter states (product mode) or a Gram matrix (factor
        mode); the fill-up adds ``1 - omega^-1/2 T omega^-1/2`` to one of
        them, ``T`` the sampled sum. Positivity therefore reduces to the
        coefficients, the letter states and that complement.
        """
        f = self.frame
        c = self.components[nu]
        coef = self.component_coef(nu)
        w = f.omega_inv_sqrt
        t = herm(w @ f.weighted_sum(c.strings, coef) @ w)
        fill = herm(np.eye(f.D) - w @ f.omega @ w + w @ (f.omega - f.weighted_sum(c.strings, coef)) @ w)
        used = [j for j in range(f.m) if f.letter_probs[j] > 0]
        letter_min = min(float(np.linalg.eigvalsh(f.letter_states[j]).min()) for j in used)
        support = int(c.strings.size) + (1 if self.sentinel is not None else 0)
        return ComponentValidity(
            support=support,
            min_coefficient=float(coef.min()),
            min_letter_eigenvalue=letter_min,
            min_fill_eigenvalue=float(np.linalg.eigvalsh(fill).min()),
            completeness_error=float(np.abs(t + fill - np.eye(f.D)).max()),
        )

    def average_povm(self) -> Povm:
        povms = [self.component_povm(nu) for nu in range(len(self.components))]
        eff = np.mean([p.effects for p in povms], axis=0)
        return Povm(eff, povms[0].labels, check=False)

    def target_povm(self) -> Povm:
        """``a^{(x) l}`` on the same outcome set (zero effect at the sentinel)."""
        f = self.frame
        check_dense(f.D * (f.n_strings + 1), "dense POVM export")
        eff = np.array([tensor(*[self.povm.effects[x] for x in s]) for s in string_digits(f.m, f.l)])
        if self.sentinel is not None:
            eff = np.concatenate([eff, np.zeros((1, f.D, f.D), dtype=complex)])
        return Povm(eff, self.outcome_labels(), check=False)

    # -- evaluation
    def _fill_terms(self):
        """Per fill target: (index, sandwiched remainder averaged over nu)."""
        return sorted(self.fill_ops.items())

    def _fill_stack(self):
        fills = self._fill_terms()
        idx = np.array([j for j, _ in fills], dtype=np.int64)
        ops = np.array([r for _, r in fills])
        return idx, ops

    def _cp_rows(self, diff: np.ndarray, fill_traces: np.ndarray) -> float:
        """Sum of ``|gamma - Gamma|`` given per-string differences without the
        fill-up part (rows = sources) and ``Tr(S_k R_f)`` for each fill target."""
        f = self.frame
        idx, _ = self._fill_stack()
        inside = idx < f.n_strings
        contrib = np.abs(diff)
        contrib[:, idx[inside]] = 0.0
        base = np.zeros((diff.shape[0], idx.size))
        base[:, inside] = diff[:, idx[inside]]
        return float(contrib.sum() + np.abs(base - fill_traces).sum())

    def cp_error_dual(self, s_effects: np.ndarray) -> float:
        """(CP) value for the source ``q_k sigma_k = sqrt(omega) S_k sqrt(omega)``."""
        f = self.frame
        _, rs = self._fill_stack()
        total = 0.0
        for s in np.asarray(s_effects):
            g_rho = f.rho_hat_traces(s)
            g_xi = g_rho * f.typical if f.mode == "product" else f.xi_traces(s)
            diff = (f.lam * g_rho - self.coef_total * g_xi)[None, :]
            fill_tr = np.einsum("ab,fba->f", s, rs).real[None, :]
            total += self._cp_rows(diff, fill_tr)
        return 0.5 * total

    def cp_error_product(self, letter_source: Ensemble) -> float:
        """(CP) value for the i.i.d. source built from a single-letter ensemble
        whose average is ``rho``."""
        f = self.frame
        s1 = dual_povm(letter_source).effects
        if f.mode != "product":
            check_dense(len(s1) ** f.l * f.D, "product source")
            s_full = np.array([tensor(*[s1[x] for x in ks]) for ks in string_digits(len(s1), f.l)])
            return self.cp_error_dual(s_full)
        t1 = np.einsum("kab,jba->kj", s1, f.letter_states).real
        g = _kron_rows([t1] * f.l) * f.typical[None, :]  # (K^l, m^l)
        diff = g * (f.lam - self.coef_total)[None, :]
        _, rs = self._fill_stack()
        fill_tr = np.array([product_traces(r, s1, f.l).real for r in rs]).T
        return 0.5 * self._cp_rows(diff, fill_tr)

    def sandwiched_letter_sums(self, k: int) -> np.ndarray:
        """``sum_{j^l : j_k = x} sqrt(omega) A_{j^l} sqrt(omega)`` for each letter x."""
        f = self.frame
        digits_k = (np.arange(f.n_strings) // f.m ** (f.l - 1 - k)) % f.m
        out = np.zeros((f.m, f.D, f.D), dtype=complex)
        for x in range(f.m):
            sel = np.flatnonzero((digits_k == x) & (self.coef_total != 0))
            out[x] = f.weighted_sum(sel, self.coef_total[sel])
        for j, r in self._fill_terms():
            x = digits_k[j] if j < f.n_strings else 0
            out[x] += r
        return out

    def extrinsic(self) -> "ExtrinsicMap":
        return extrinsic_postprocess(self)

    # -- serialization
    def to_json(self) -> dict:
        return {
            "rho": matrix_to_json(self.rho),
            "povm": self.povm.to_json(),
            "params": asdict(self.params),
            "components": [
                {"strings": c.strings.tolist(), "counts": c.counts.tolist(), "scale": c.scale}
                for c in self.components
            ],
        }

    @classmethod
    def from_json(cls, obj) -> "SeparationResult":
        try:
            rho = matrix_from_json(obj["rho"])
            povm = Povm.from_json(obj["povm"])
            params = SeparationParams(**obj["params"])
            comps = [(np.asarray(c["strings"], dtype=np.int64), np.asarray(c["counts"], dtype=np.int64),
                      float(c["scale"])) for c in obj["components"]]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed separation result: {exc}") from exc
        frame = _Frame(rho, povm, params.l, params.delta, params.epsilon)
        res = _assemble(frame, params, [(s, n) for s, n, _ in comps])
        for c, (_, _, scale) in zip(res.components, comps):
            if abs(c.scale - scale) > 1e-9 * max(1.0, scale):
                raise ValidationError("stored scale does not match the recomputed one")
        return res


# --- construction ------------------------------------------------------------------------


def _component_rng(seed: int, nu: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(nu)]))


def _sample_component(frame: _Frame, params: SeparationParams, nu: int):
    rng = _component_rng(params.seed, nu)
    cdf = np.cumsum(frame.L)
    u = rng.random(params.M) * cdf[-1]
    pos = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
    return np.unique(frame.typ_idx[pos], return_counts=True)


def _omega_frame_eigs(frame: _Frame, t: np.ndarray) -> np.ndarray:
    w = frame.omega_inv_sqrt
    return np.linalg.eigvalsh(herm(w @ t @ w))


def _event_i(frame: _Frame, xbar: np.ndarray, eps: float, omega_big: np.ndarray, inv_root: np.ndarray):
    """Generalized eigenvalue range of ``xbar`` relative to ``Omega``."""
    vals = np.linalg.eigvalsh(herm(inv_root @ xbar @ inv_root))
    keep = vals[-omega_big:] if omega_big else vals
    lo, hi = float(keep.min()), float(keep.max())
    return (1 - eps - 1e-12 <= lo and hi <= 1 + eps + 1e-12), (lo, hi)


def _assemble(frame: _Frame, params: SeparationParams, supports) -> SeparationResult:
    eps = params.epsilon
    n = len(supports)
    pref = frame.S / (1 + eps)
    big_omega = frame.Q @ (frame.Q.conj().T @ frame.omega_prime @ frame.Q) @ frame.Q.conj().T / frame.S
    rank = frame.Q.shape[1]
    inv_root = inv_sqrtm_psd(big_omega)
    coef_total = np.zeros(frame.n_strings)
    fill_ops: dict = {}
    comps = []
    all_counts = np.zeros(frame.n_strings)
    for strings, counts in supports:
        coef = pref * counts / params.M
        t = frame.weighted_sum(strings, coef)
        lam_max = float(_omega_frame_eigs(frame, t).max())
        scale = 1.0 if lam_max <= 1 + _POVM_TOL else 1.0 / lam_max
        ok, rng_i = _event_i(frame, t / pref, eps, rank, inv_root)
        comps.append(Component(strings, counts, scale, lam_max, ok, rng_i))
        np.add.at(coef_total, strings, scale * coef / n)
        np.add.at(all_counts, strings, counts)
        target = frame.n_strings if params.fill == "sentinel" else int(strings[0])
        rem = (frame.omega - scale * t) / n
        fill_ops[target] = fill_ops.get(target, 0) + rem

    freq = all_counts[frame.typ_idx] / (n * params.M)
    event_ii = bool(np.all(np.abs(freq - frame.L) <= eps * frame.L + 1e-15))

    res = SeparationResult(frame.rho, frame.a, params, comps, frame, coef_total, fill_ops, event_ii)
    res.cm_error = _cm_from_frame(res)
    res.diagnostics = {
        "mode": frame.mode,
        "S": frame.S,
        "typical_strings": int(frame.typ_idx.size),
        "alpha": frame.alpha,
        "cutoff": frame.cut,
        "pi_rank": rank,
        "trace_omega_prime": float(np.trace(frame.omega_prime).real),
        "trace_Omega": float(np.trace(big_omega).real),
        "max_xi_eigenvalue": frame.max_xi_eig,
        "khat": frame.khat,
        "event_I": [c.event_i for c in comps],
        "event_II": event_ii,
        "rescaled_components": int(sum(c.scale < 1 for c in comps)),
        "min_scale": float(min(c.scale for c in comps)),
        "fill_targets": len(fill_ops),
    }
    return res


def _cm_from_frame(res: SeparationResult) -> float:
    f = res.frame
    terms = f.cm_terms(res.coef_total)
    total = float(terms.sum())
    for j, r in res._fill_terms():
        if j < f.n_strings:
            total -= terms[j]
            x = f.lam[j] * f.rho_hat(j) - res.coef_total[j] * f.xi(j) - r
        else:
            x = -r
        total += 0.5 * trace_norm(herm(x))
    return total


def build_separation(rho, a: Povm, params: SeparationParams) -> SeparationResult:
    """Sample ``N`` sub-POVMs with at most ``M`` supported strings each and fill
    them up to POVMs; see the module docstring for the frame conventions.

    The realized sub-POVM condition is checked per component: if the sampled
    sum exceeds the identity, the component is scaled down before fill-up and
    the factor is recorded in ``Component.scale``.
    """
    ens = induced_ensemble(density(rho), a)
    params = params.resolve(ens)
    frame = _Frame(rho, a, params.l, params.delta, params.epsilon)
    supports = [_sample_component(frame, params, nu) for nu in range(params.N)]
    return _assemble(frame, params, supports)


# --- error functionals (dense, any POVM pair) -------------------------------------------------


def _aligned(a: Povm, b: Povm) -> tuple[np.ndarray, np.ndarray]:
    """Effects of ``a`` and ``b`` over the union of their labels."""
    labels = list(a.labels)
    for x in b.labels:
        if x not in labels:
            labels.append(x)
    pos = {x: i for i, x in enumerate(labels)}
    ea = np.zeros((len(labels), a.dim, a.dim), dtype=complex)
    eb = np.zeros_like(ea)
    for x, e in zip(a.labels, a.effects):
        ea[pos[x]] += e
    for x, e in zip(b.labels, b.effects):
        eb[pos[x]] += e
    return ea, eb


def cm_error(omega, a: Povm, big_a: Povm) -> float:
    """``sum_j 1/2 || sqrt(omega) (A_j - a_j) sqrt(omega) ||_1`` (labels aligned)."""
    if a.dim != big_a.dim:
        raise ValidationError("POVMs act on different spaces")
    ea, eb = _aligned(a, big_a)
    root = sqrtm_psd(omega)
    return float(sum(0.5 * trace_norm(herm(root @ (y - x) @ root)) for x, y in zip(ea, eb)))


def cp_error(source: Ensemble, a: Povm, big_a: Povm) -> float:
    """``1/2 || gamma - Gamma ||_1`` with ``gamma(k, j) = q_k Tr(sigma_k a_j)``."""
    ea, eb = _aligned(a, big_a)
    w = source.weighted()
    g = np.einsum("kab,jba->kj", w, ea).real
    big_g = np.einsum("kab,jba->kj", w, eb).real
    return 0.5 * float(np.abs(g - big_g).sum())


def purification_distance(omega, a: Povm, big_a: Povm) -> float:
    """Trace distance of ``(id (x) Phi)(pi)`` and ``(id (x) phi)(pi)`` for the
    purification ``pi = |r><r|``, ``|r> = (1 (x) sqrt(omega))|I>``, whose second
    factor carries ``omega``; the measurement acts on that factor."""
    d = np.asarray(omega).shape[0]
    check_dense(d * d, "purification")
    vec = np.kron(np.eye(d), sqrtm_psd(omega)) @ np.eye(d, dtype=complex).reshape(-1)
    r = vec.reshape(d, d)  # r[x, y]: x on the reference, y on the measured factor
    ea, eb = _aligned(a, big_a)
    total = 0.0
    for x, y in zip(ea, eb):
        # Tr_2 (1 (x) E) |r><r| = r E^T r^dagger
        total += 0.5 * trace_norm(herm(r @ (y - x).T @ r.conj().T))
    return float(total)


# --- extrinsic post-processing -------------------------------------------------------------


def extrinsic_conditional(traces: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``Pr{nu | j} = x_nu t_{nu j} / sum_nu x_nu t_{nu j}`` from a dense table
    ``t_{nu j} = Tr(omega A^(nu)_j)``; rows with zero mass get the prior."""
    t = np.asarray(traces, dtype=float) * np.asarray(weights, dtype=float)[:, None]
    den = t.sum(axis=0)
    out = np.where(den > 0, t / np.where(den > 0, den, 1.0), np.asarray(weights, dtype=float)[:, None])
    return out.T


@dataclass
class ExtrinsicMap:
    """Conditional law of the extrinsic label given the outcome string.

    ``table`` is a sparse (outcomes x N) matrix holding the rows of strings
    that some component supports; every other row equals ``prior``.
    """

    table: sp.csr_matrix
    supported: np.ndarray
    prior: np.ndarray

    def row(self, j: int) -> np.ndarray:
        if self.supported[j]:
            return self.table.getrow(j).toarray()[0]
        return self.prior.copy()

    def apply(self, gamma: np.ndarray) -> np.ndarray:
        """Joint law of (k, nu) from ``gamma[k, j] = Pr{k, j}`` under ``a``."""
        gamma = np.asarray(gamma, dtype=float)
        joint = np.asarray(self.table.T @ gamma.T).T
        rest = gamma[:, ~self.supported].sum(axis=1)
        return joint + rest[:, None] * self.prior[None, :]


def independence_deficit(joint: np.ndarray) -> float:
    """Total variation between a joint table and the product of its marginals."""
    joint = np.asarray(joint, dtype=float)
    prod = np.outer(joint.sum(axis=1), joint.sum(axis=0))
    return 0.5 * float(np.abs(joint - prod).sum())


def extrinsic_postprocess(result: SeparationResult) -> ExtrinsicMap:
    """``Pr{nu | j} = x_nu Tr(omega A^(nu)_j) / sum_nu' x_nu' Tr(omega A^(nu')_j)``.

    Normalizing by the realized mass rather than by ``lambda_j`` makes every
    row a distribution; strings no component supports fall back to the prior.
    """
    f = result.frame
    n = len(result.components)
    x = result.weights
    n_out = f.n_strings + (1 if result.sentinel is not None else 0)
    rows, cols, vals = [], [], []
    for nu, c in enumerate(result.components):
        mass = result.component_coef(nu) * f.xi_trace[c.strings]
        rows += [c.strings, [result.fill_target(nu)]]
        cols += [np.full(c.strings.size + 1, nu)]
        vals += [x[nu] * mass, [x[nu] * max(0.0, 1.0 - float(mass.sum()))]]
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_out, n)
    )
    den = np.asarray(mat.sum(axis=1)).ravel()
    supported = den > 0
    inv = np.where(supported, 1.0 / np.where(supported, den, 1.0), 0.0)
    return ExtrinsicMap(sp.csr_matrix(sp.diags(inv) @ mat), supported, x.copy())


def product_source_gamma(result: SeparationResult, letter_source: Ensemble) -> np.ndarray:
    """``gamma[k^l, j^l] = q_{k^l} Tr(sigma_{k^l} a_{j^l})`` for an i.i.d. source."""
    f = result.frame
    s1 = dual_povm(letter_source).effects
    t1 = np.einsum("kab,jba->kj", s1, f.letter_states).real * f.letter_probs[None, :]
    g = _kron_rows([t1] * f.l)
    if result.sentinel is not None:
        g = np.concatenate([g, np.zeros((g.shape[0], 1))], axis=1)
    return g


# --- sources for (CP) ---------------------------------------------------------------------------


def sample_dual_sources(result: SeparationResult, count: int, rng: np.random.Generator) -> list:
    """Dual-POVM descriptions of ``count`` sources with average ``omega``.

    Mixes random coarse POVMs (2 or 3 outcomes) with random rank-one POVMs,
    which correspond to extremal ensembles of pure states.
    """
    f = result.frame
    out = []
    for i in range(count):
        if i % 3 == 2:
            out.append(random_povm(f.D, f.D + 1, rng, rank=1).effects)
        else:
            out.append(random_povm(f.D, 2 + i % 2, rng).effects)
    return out


def sample_letter_sources(rho, count: int, rng: np.random.Generator) -> list:
    return [random_ensemble_for(rho, 2, rng) for _ in range(count)]


def sampled_cp_errors(result: SeparationResult, count: int, rng: np.random.Generator) -> np.ndarray:
    """(CP) values on ``count`` sources: one third i.i.d. letter sources, the
    rest dual-POVM sources on the whole block."""
    n_letter = count // 3
    vals = [result.cp_error_product(e) for e in sample_letter_sources(result.rho, n_letter, rng)]
    vals += [result.cp_error_dual(s) for s in sample_dual_sources(result, count - n_letter, rng)]
    return np.array(vals)


# --- matrix Chernoff -------------------------------------------------------------------------


@dataclass(frozen=True)
class ChernoffResult:
    failure_rate: float
    bound: float
    stderr: float
    trials: int

    @property
    def holds(self) -> bool:
        return self.failure_rate <= self.bound + 3 * self.stderr


def chernoff_bound(dim_k: int, m: int, eta: float, s: float) -> float:
    """``2 dim K 2^(-M eta^2 s / (2 ln 2))`` with the exponential taken base 2."""
    return 2.0 * dim_k * 2.0 ** (-m * eta**2 * s / (2.0 * math.log(2.0)))


def operator_family(dim_k: int, s: float, rng: np.random.Generator, atoms: int = 6):
    """Finite family of operators in ``[0, 1]`` whose mean is ``>= s 1``.

    Random projectors are mixed with the identity just enough to lift the
    smallest eigenvalue of the mean to ``s``.
    """
    probs = rng.dirichlet(np.ones(atoms))
    ops = []
    for _ in range(atoms):
        r = int(rng.integers(0, dim_k + 1))
        z = rng.standard_normal((dim_k, dim_k)) + 1j * rng.standard_normal((dim_k, dim_k))
        q, _ = np.linalg.qr(z)
        ops.append(q[:, :r] @ q[:, :r].conj().T)
    ops = np.array(ops)
    mean = np.einsum("i,iab->ab", probs, ops)
    low = float(np.linalg.eigvalsh(herm(mean)).min())
    t = 0.0 if low >= s else (s - low) / (1.0 - low)
    ops = (1 - t) * ops + t * np.eye(dim_k)
    return probs, ops


def chernoff_check(
    dim_k: int,
    m: int,
    eta: float,
    s: float,
    trials: int,
    seed: int,
    family: tuple | None = None,
    batch: int = 2000,
) -> ChernoffResult:
    """Empirical frequency of ``(1/M) sum X_mu`` leaving ``[(1 +- eta) sigma]``."""
    if not 0 < eta < 0.5:
        raise ValidationError("eta must lie in (0, 1/2)")
    if not 0 < s <= 1:
        raise ValidationError("s must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    probs, ops = family if family is not None else operator_family(dim_k, s, rng)
    sigma = np.einsum("i,iab->ab", probs, ops)
    if np.linalg.eigvalsh(herm(sigma)).min() < s - 1e-12:
        raise ValidationError("family mean is not bounded below by s")
    w = inv_sqrtm_psd(sigma)
    whitened = np.einsum("ab,ibc,cd->iad", w, ops, w)
    fails = 0
    done = 0
    while done < trials:
        b = min(batch, trials - done)
        counts = rng.multinomial(m, probs, size=b) / m
        avg = np.einsum("ti,iab->tab", counts, whitened)
        ev = np.linalg.eigvalsh(avg)
        fails += int(np.sum((ev.min(axis=1) < 1 - eta) | (ev.max(axis=1) > 1 + eta)))
        done += b
    p = fails / trials
    return ChernoffResult(p, chernoff_bound(dim_k, m, eta, s), math.sqrt(p * (1 - p) / trials), trials)


# --- marginals and the condition chain ------------------------------------------------------------


def marginal_from_sandwiched(sums: np.ndarray, rho, l: int, k: int) -> Povm:
    """``rho^-1/2 Tr_{!=k}(Y_x) rho^-1/2`` for each letter sum ``Y_x``."""
    rho = np.asarray(rho, dtype=complex)
    d = rho.shape[0]
    w = inv_sqrtm_psd(rho)
    eff = np.array([w @ partial_trace(y, [d] * l, [k]) @ w for y in sums])
    comp = np.eye(d) - w @ rho @ w
    eff[0] = eff[0] + comp
    return Povm(herm(eff), check=False)


def marginal_povm(big_a, k: int, rho) -> Povm:
    """Single-position marginal ``(A|k)`` of a POVM on strings.

    ``big_a`` is either a dense :class:`Povm` whose labels are tuples of
    letters (a sentinel label is folded into letter 0) or a
    :class:`SeparationResult`.
    """
    rho = np.asarray(rho, dtype=complex)
    if isinstance(big_a, SeparationResult):
        f = big_a.frame
        return marginal_from_sandwiched(big_a.sandwiched_letter_sums(k), rho, f.l, k)
    d = rho.shape[0]
    l = round(math.log(big_a.dim) / math.log(d))
    if d**l != big_a.dim:
        raise ValidationError("POVM dimension is not a power of the state dimension")
    letters = sorted({lab[k] for lab in big_a.labels if isinstance(lab, tuple)})
    m = max(letters) + 1 if letters else 1
    root = tensor(*([sqrtm_psd(rho)] * l))
    sums = np.zeros((m, big_a.dim, big_a.dim), dtype=complex)
    for lab, e in zip(big_a.labels, big_a.effects):
        x = lab[k] if isinstance(lab, tuple) else 0
        sums[x] += e
    sums = np.einsum("ab,xbc,cd->xad", root, sums, root)
    return marginal_from_sandwiched(sums, rho, l, k)


@dataclass
class ConditionReport:
    c0: float
    c1: float
    c2: float
    c3: float
    marginals: list
    cm_value: float | None = None
    cp_values: list = field(default_factory=list)
    purification_value: float | None = None

    def holds(self, eps: float) -> dict:
        return {name: getattr(self, name) <= eps for name in ("c0", "c1", "c2", "c3")}

    def chain_consistent(self, eps: float) -> bool:
        """c3 <= eps implies c2 <= eps implies c1 <= eps implies c0 <= eps."""
        h = self.holds(eps)
        return (not h["c3"] or h["c2"]) and (not h["c2"] or h["c1"]) and (not h["c1"] or h["c0"])


def condition_chain(big_a, a: Povm, rho, source: Ensemble, gain) -> ConditionReport:
    """Closeness of the single-position marginals of ``big_a`` to ``a``,
    from weakest to strongest:

    * c0: gap in the expected gain ``sum p_i Tr(rho_i a_j) F_ij``, averaged over positions;
    * c1: ``sum_ij p_i |Tr(rho_i (A|k)_j) - Tr(rho_i a_j)|``, worst position;
    * c2: the same without the weights ``p_i``, worst source index;
    * c3: ``sum_j ||(A|k)_j - a_j||_op``, worst position.

    ``source`` is the single-letter ensemble ``{p_i, rho_i}`` and ``gain`` the
    matrix ``F_ij`` (rows: source index, columns: outcome). With entries of
    ``gain`` in ``[-1, 1]`` the values are ordered c0 <= c1 <= c2 <= c3.
    """
    gain = np.asarray(gain, dtype=float)
    rho = np.asarray(rho, dtype=complex)
    d = rho.shape[0]
    l = big_a.frame.l if isinstance(big_a, SeparationResult) else round(math.log(big_a.dim) / math.log(d))
    states = np.array(source.states)
    p = source.probs
    base = np.einsum("iab,jba->ij", states, a.effects).real
    margs, c1s, c2s, c3s, gains = [], [], [], [], []
    for k in range(l):
        mk = marginal_povm(big_a, k, rho)
        margs.append(mk)
        eff = mk.effects[: len(a)]
        tr = np.einsum("iab,jba->ij", states, eff).real
        diff = tr - base
        c1s.append(float(np.abs(p[:, None] * diff).sum()))
        c2s.append(float(np.abs(diff).sum(axis=1).max()))
        c3s.append(float(sum(np.abs(np.linalg.eigvalsh(herm(x - y))).max() for x, y in zip(eff, a.effects))))
        gains.append(float((p[:, None] * tr * gain).sum()))
    f_a = float((p[:, None] * base * gain).sum())
    c0 = abs(float(np.mean(gains)) - f_a)
    return ConditionReport(c0, max(c1s), max(c2s), max(c3s), margs)


# --- converse -----------------------------------------------------------------------------------


@dataclass(frozen=True)
class ConverseBounds:
    M_lower: float
    MN_lower: float
    MN_lower_exact: float
    delta: float
    khat: float


def converse_bounds(lam, ens: Ensemble, l: int, epsilon: float) -> ConverseBounds:
    """Finite-``l`` lower bounds on ``M`` and ``M N`` for any construction
    meeting (CM) at ``epsilon``.

    ``MN_lower = (1 - eps)/2 * 2^(l H(lam) - khat m delta sqrt l)`` with the
    Chebyshev width ``delta = sqrt(2m / (1 - eps))`` and ``khat`` the largest
    ``|log2 lam_j|``. ``MN_lower_exact`` replaces the exponent by the largest
    typical string probability. ``M_lower`` follows the rank argument:
    ``(1 - eps)/4 * 2^(l H(rho) - khat_rho d delta_rho sqrt l)`` divided by the
    largest conditional typical rank ``2^(l H(rhohat|lam) + ...)``, with
    ``delta_rho = 4 sqrt(d)/(1 - eps)`` and ``delta_c = sqrt(4 m d/(1 - eps))``.
    """
    lam = np.asarray(lam, dtype=float)
    if not 0 <= epsilon < 1:
        raise ValidationError("epsilon must lie in [0, 1)")
    m = lam.size
    d = ens.dim
    root = math.sqrt(l)
    pos = lam[lam > 0]
    kl = float(np.max(np.abs(np.log2(pos)))) if pos.size else 0.0
    delta = math.sqrt(2 * m / (1 - epsilon))
    h_lam = shannon_entropy(lam)
    mn = (1 - epsilon) / 2 * 2.0 ** (l * h_lam - kl * m * delta * root)

    # tightest value allowed by the same argument: (1-eps)/2 / max typical probability
    best = -math.inf
    for cut in itertools.combinations(range(l + m - 1), m - 1):
        b = (-1,) + cut + (l + m - 1,)
        counts = np.array([b[i + 1] - b[i] - 1 for i in range(m)])
        if np.any((lam == 0) & (counts > 0)) or not is_typical_counts(counts, lam, delta):
            continue
        best = max(best, float(counts[lam > 0] @ np.log2(lam[lam > 0])))
    mn_exact = (1 - epsilon) / 2 * 2.0 ** (-best) if best > -math.inf else 0.0

    rho = ens.average()
    sym = eigen_symbols(rho)
    h_rho = von_neumann_entropy(rho)
    delta_rho = 4 * math.sqrt(d) / (1 - epsilon)
    delta_c = math.sqrt(4 * m * d / (1 - epsilon))
    khat = max([sym.khat] + [eigen_symbols(s).khat for s, dg in zip(ens.states, ens.degenerate) if not dg])
    h_cond = sum(p * von_neumann_entropy(s) for p, s in zip(ens.probs, ens.states))
    spread = sum(math.sqrt(p * (1 - p)) * von_neumann_entropy(s) for p, s in zip(ens.probs, ens.states))
    log_rank_pi = math.log2((1 - epsilon) / 4) + l * h_rho - sym.khat * d * delta_rho * root
    log_rank_theta = l * h_cond + delta_c * root * spread + khat * m * d * delta_c * root
    m_lower = 2.0 ** (log_rank_pi - log_rank_theta)
    return ConverseBounds(m_lower, mn, mn_exact, delta, khat)
