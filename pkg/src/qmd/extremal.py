"""Extremal POVMs and convex decompositions.

A POVM ``a`` is extremal iff the only Hermitian perturbations ``D_j`` with
``supp D_j`` inside ``supp a_j`` and ``sum_j D_j = 0`` are zero. That is a
real linear system, solved here with :func:`scipy.linalg.null_space`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

from .errors import ValidationError
from .infomeasures import shannon_entropy
from .numerics import herm, inv_sqrtm_psd
from .quantum import Povm, chrysler_povm, chrysler_states, density, projector

SUPPORT_TOL = 1e-10


def _support(e: np.ndarray, tol: float = SUPPORT_TOL) -> np.ndarray:
    vals, vecs = np.linalg.eigh(herm(e))
    return vecs[:, vals > tol]


def _herm_basis(r: int) -> np.ndarray:
    """Real basis of r-by-r Hermitian matrices, shape (r*r, r, r)."""
    if r == 0:
        return np.zeros((0, 0, 0), dtype=complex)
    out = []
    for i in range(r):
        b = np.zeros((r, r), dtype=complex)
        b[i, i] = 1
        out.append(b)
    for i in range(r):
        for k in range(i + 1, r):
            b = np.zeros((r, r), dtype=complex)
            b[i, k] = b[k, i] = 1
            out.append(b)
            b = np.zeros((r, r), dtype=complex)
            b[i, k], b[k, i] = 1j, -1j
            out.append(b)
    return np.array(out).reshape(-1, r, r)


@dataclass(frozen=True)
class ExtremalityReport:
    extremal: bool
    null_dim: int
    witness: np.ndarray | None  # perturbation D_j, shape (m, d, d)

    def __bool__(self) -> bool:
        return self.extremal


def _perturbation_space(effects: np.ndarray) -> np.ndarray:
    """Basis of admissible perturbations, shape (k, m, d, d)."""
    d = effects.shape[1]
    gens = []
    for j, e in enumerate(effects):
        b = _support(e)
        for h in _herm_basis(b.shape[1]):
            g = np.zeros_like(effects)
            g[j] = b @ h @ b.conj().T
            gens.append(g)
    if not gens:
        return np.zeros((0,) + effects.shape, dtype=complex)
    gens = np.array(gens)
    sums = gens.sum(axis=1).reshape(len(gens), d * d)
    system = np.concatenate([sums.real, sums.imag], axis=1).T  # (2 d^2, params)
    kernel = null_space(system, rcond=1e-10)
    return np.einsum("pk,pjab->kjab", kernel, gens)


def is_extremal(a: Povm) -> ExtremalityReport:
    space = _perturbation_space(a.effects)
    witness = herm(space[0]) if len(space) else None
    return ExtremalityReport(len(space) == 0, len(space), witness)


def _max_step(effects: np.ndarray, direction: np.ndarray) -> float:
    """Largest t with ``effects + t direction`` positive, for a direction
    supported inside the effect supports."""
    t = math.inf
    for e, dj in zip(effects, direction):
        b = _support(e)
        if b.shape[1] == 0:
            continue
        p = b.conj().T @ e @ b
        w = inv_sqrtm_psd(p)
        h = w @ (b.conj().T @ dj @ b) @ w
        low = float(np.linalg.eigvalsh(herm(h)).min())
        if low < -1e-14:
            t = min(t, -1.0 / low)
    return t


def _snap(effects: np.ndarray) -> np.ndarray:
    """Zero eigenvalues below the support tolerance so rank drops are exact."""
    out = np.empty_like(effects)
    for j, e in enumerate(effects):
        vals, vecs = np.linalg.eigh(herm(e))
        vals = np.where(vals > SUPPORT_TOL, vals, 0.0)
        out[j] = (vecs * vals) @ vecs.conj().T
    return out


def _walk_to_extreme(effects: np.ndarray) -> np.ndarray:
    while True:
        space = _perturbation_space(effects)
        if len(space) == 0:
            return effects
        step = _max_step(effects, space[0])
        if not math.isfinite(step):
            raise ValidationError("perturbation direction is unbounded; effects are not a POVM")
        effects = _snap(effects + step * space[0])


@dataclass
class ConvexDecomposition:
    weights: np.ndarray
    components: list

    def mixture(self) -> Povm:
        eff = sum(x * c.effects for x, c in zip(self.weights, self.components))
        return Povm(eff, self.components[0].labels, check=False)

    def reconstruction_error(self, a: Povm) -> float:
        return float(np.abs(self.mixture().effects - a.effects).max())

    def __len__(self) -> int:
        return len(self.components)


def extremal_decompose(a: Povm, max_components: int | None = None) -> ConvexDecomposition:
    """Caratheodory walk: find an extreme point ``e`` of the face of the
    current remainder ``c``, extend the segment from ``e`` through ``c`` to the
    boundary at ``c'``, and write ``c`` as a mixture of ``e`` and ``c'``.

    Each step lowers the dimension of the face, so at most
    ``1 + null_dim(a)`` components are produced.
    """
    rest = a.effects.copy()
    mass = 1.0
    weights, comps = [], []
    limit = max_components or 1 + len(_perturbation_space(rest))
    for _ in range(limit):
        if len(_perturbation_space(rest)) == 0:
            break
        e = _walk_to_extreme(rest)
        direction = rest - e
        if np.abs(direction).max() < 1e-12:
            rest = e
            break
        s = _max_step(rest, direction)
        comps.append(e)
        weights.append(mass * s / (1 + s))
        mass /= 1 + s
        rest = _snap(rest + s * direction)
    comps.append(rest)
    weights.append(mass)
    return ConvexDecomposition(
        np.array(weights), [Povm(herm(c), a.labels, check=False) for c in comps]
    )


def delta_rate(rho, decomp: ConvexDecomposition) -> float:
    """``H(j | nu) = sum_nu x_nu H(lambda^(nu))``, an upper bound on the
    minimal data rate of the decomposed POVM on ``rho``."""
    rho = density(rho)
    total = 0.0
    for x, c in zip(decomp.weights, decomp.components):
        lam = np.clip(np.einsum("ab,jba->j", rho, c.effects).real, 0.0, None)
        total += x * shannon_entropy(lam / lam.sum())
    return float(total)


# --- the pentagon benchmark ------------------------------------------------------------


def chrysler_constants() -> tuple[float, float, float]:
    """``(alpha, beta, delta)`` with ``delta = H(1-beta, beta) + beta``."""
    t = 2 * math.pi / 5
    alpha = 1 - 1 / math.tan(t) ** 2
    beta = 0.5 / math.sin(t) ** 2
    h = -(1 - beta) * math.log2(1 - beta) - beta * math.log2(beta)
    return alpha, beta, h + beta


def chrysler_components() -> list:
    """The five extremal POVMs ``(alpha e_t, beta e_{t+2}, beta e_{t+3})``."""
    alpha, beta, _ = chrysler_constants()
    vecs = chrysler_states()
    out = []
    for t in range(5):
        eff = np.zeros((5, 2, 2), dtype=complex)
        eff[t] = alpha * projector(vecs[t])
        eff[(t + 2) % 5] = beta * projector(vecs[(t + 2) % 5])
        eff[(t + 3) % 5] = beta * projector(vecs[(t + 3) % 5])
        out.append(Povm(eff))
    return out


@dataclass(frozen=True)
class ChryslerReport:
    alpha: float
    beta: float
    delta: float
    decomposition: ConvexDecomposition
    reconstruction_error: float
    all_extremal: bool
    component_rates: tuple
    delta_rate: float
    walk_rate: float
    walk_components: int

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "delta": self.delta,
            "weights": self.decomposition.weights.tolist(),
            "components": [c.to_json() for c in self.decomposition.components],
            "reconstruction_error": self.reconstruction_error,
            "all_extremal": self.all_extremal,
            "component_rates": list(self.component_rates),
            "delta_rate": self.delta_rate,
            "walk_rate": self.walk_rate,
            "walk_components": self.walk_components,
        }


def chrysler_benchmark() -> ChryslerReport:
    """Pentagon example on the maximally mixed qubit: the symmetric
    decomposition, and for comparison the one found by the generic walk."""

    a = chrysler_povm()
    alpha, beta, delta = chrysler_constants()
    comps = chrysler_components()
    dec = ConvexDecomposition(np.full(5, 0.2), comps)
    rho = np.eye(2) / 2
    rates = tuple(delta_rate(rho, ConvexDecomposition(np.ones(1), [c])) for c in comps)
    walk = extremal_decompose(a)
    return ChryslerReport(
        alpha=alpha,
        beta=beta,
        delta=delta,
        decomposition=dec,
        reconstruction_error=dec.reconstruction_error(a),
        all_extremal=all(is_extremal(c).extremal for c in comps),
        component_rates=rates,
        delta_rate=delta_rate(rho, dec),
        walk_rate=delta_rate(rho, walk),
        walk_components=len(walk),
    )


# --- cone membership ---------------------------------------------------------------


@dataclass(frozen=True)
class ConeResult:
    member: bool
    residual: float
    operator: np.ndarray
    iterations: int


def cone_membership(states, beta, tol: float = 1e-8, max_iter: int = 20000) -> ConeResult:
    """Is ``beta_i = Tr(rho_i A)`` solvable with ``A >= 0``?

    Equivalently, does ``beta`` lie in the cone spanned by the vectors
    ``(<psi|rho_i|psi>)_i``. Solved by alternating projections between the
    affine solution set and the PSD cone; these converge whenever the
    intersection is non-empty, so ``member=False`` after ``max_iter`` steps
    means no solution was found, not a proof of infeasibility.
    """
    rho = np.asarray(states, dtype=complex)
    beta = np.asarray(beta, dtype=float)
    k, d, _ = rho.shape
    if beta.shape != (k,):
        raise ValidationError("one target value per state required")
    # Tr(rho_i A) = <rho_i^*, A> as a real-linear map on vec(A)
    rows = np.concatenate([rho.conj().reshape(k, -1).real, -rho.conj().reshape(k, -1).imag], axis=1)
    pinv = np.linalg.pinv(rows)

    def to_vec(x):
        f = x.reshape(-1)
        return np.concatenate([f.real, f.imag])

    def from_vec(v):
        return herm((v[: d * d] + 1j * v[d * d:]).reshape(d, d))

    def residual(x):
        return float(np.abs(np.einsum("iab,ba->i", rho, x).real - beta).max())

    x = from_vec(pinv @ beta)
    it = 0
    for it in range(1, max_iter + 1):
        vals, vecs = np.linalg.eigh(x)
        psd = (vecs * np.clip(vals, 0.0, None)) @ vecs.conj().T
        if residual(psd) <= tol:
            x = psd
            break
        v = to_vec(psd)
        x = from_vec(v - pinv @ (rows @ v - beta))
    vals, vecs = np.linalg.eigh(x)
    x = (vecs * np.clip(vals, 0.0, None)) @ vecs.conj().T
    res = residual(x)
    return ConeResult(res <= tol, res, x, it)
