"""States, POVMs, ensembles and the POVM/ensemble duality.

Also holds the canonical-purification and fidelity toolbox: canonical
purifications ``(sqrt(rho) x 1)|I>``, their overlaps, Uhlmann fidelity and
the gentle-operator disturbance.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .numerics import (
    as_herm,
    check_dense,
    haar_unitary,
    herm,
    inv_sqrtm_psd,
    matrix_from_json,
    matrix_to_json,
    partial_trace,
    sqrtm_psd,
    support_projector,
    tensor,
    trace_norm,
)

PSD_TOL = 1e-10
TRACE_TOL = 1e-10
POVM_TOL = 1e-9


def density(m) -> np.ndarray:
    """Validate a density operator (PSD to -1e-10, unit trace) and return it."""
    rho = as_herm(m)
    if abs(np.trace(rho).real - 1.0) > TRACE_TOL:
        raise ValidationError(f"trace {np.trace(rho).real!r} is not 1")
    if np.linalg.eigvalsh(rho)[0] < -PSD_TOL:
        raise ValidationError("density operator is not positive semidefinite")
    return rho


def pure_state(amplitudes) -> np.ndarray:
    psi = np.asarray(amplitudes, dtype=complex).reshape(-1)
    if abs(np.linalg.norm(psi) - 1.0) > 1e-10:
        raise ValidationError("pure state is not normalized")
    return psi


def projector(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    return np.outer(psi, psi.conj())


@dataclass(frozen=True, eq=False)
class Povm:
    """Ordered positive operators summing to the identity.

    ``effects`` is an (m, d, d) array; ``labels`` defaults to ``range(m)``.
    """

    effects: np.ndarray
    labels: tuple = None
    check: bool = field(default=True, repr=False)

    _sub = False

    def __post_init__(self):
        eff = np.asarray(self.effects, dtype=complex)
        if eff.ndim != 3 or eff.shape[1] != eff.shape[2]:
            raise ValidationError(f"effects must have shape (m, d, d), got {eff.shape}")
        if not np.all(np.isfinite(eff)):
            raise ValidationError("effects have non-finite entries")
        eff = herm(eff)
        object.__setattr__(self, "effects", eff)
        labels = tuple(range(len(eff))) if self.labels is None else tuple(self.labels)
        if len(labels) != len(eff):
            raise ValidationError("labels and effects differ in length")
        object.__setattr__(self, "labels", labels)
        if self.check:
            self.validate()

    @property
    def dim(self) -> int:
        return self.effects.shape[1]

    def __len__(self) -> int:
        return len(self.effects)

    def __iter__(self):
        return iter(self.effects)

    def __getitem__(self, j):
        return self.effects[j]

    def total(self) -> np.ndarray:
        return herm(self.effects.sum(axis=0))

    def validate(self) -> None:
        for j, e in enumerate(self.effects):
            if np.linalg.eigvalsh(e)[0] < -PSD_TOL * max(1.0, np.abs(e).max()):
                raise ValidationError(f"effect {self.labels[j]!r} is not positive")
        gap = self.total() - np.eye(self.dim)
        if self._sub:
            if np.linalg.eigvalsh(gap)[-1] > POVM_TOL:
                raise ValidationError("sub-POVM effects sum above the identity")
        elif np.max(np.abs(gap), initial=0.0) > POVM_TOL:
            raise ValidationError("effects do not sum to the identity")

    def to_json(self) -> dict:
        return {"dim": self.dim, "effects": [matrix_to_json(e) for e in self.effects]}

    @classmethod
    def from_json(cls, obj) -> "Povm":
        try:
            dim, effects = int(obj["dim"]), obj["effects"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed POVM object: {exc}") from exc
        mats = [matrix_from_json(e) for e in effects]
        if not mats or any(m.shape != (dim, dim) for m in mats):
            raise ValidationError("POVM effects must be dim x dim")
        return cls(np.array(mats))


class SubPovm(Povm):
    """Positive operators whose sum is bounded by the identity."""

    _sub = True

    def completed(self, index: int = 0) -> Povm:
        """Fill up to a POVM by adding the remainder to effect ``index``."""
        eff = self.effects.copy()
        eff[index] = eff[index] + (np.eye(self.dim) - self.total())
        return Povm(eff, self.labels)


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Probability-weighted density operators.

    ``degenerate`` flags zero-probability members, which carry a zero matrix
    as placeholder so indices stay aligned with the POVM that produced them.
    """

    probs: np.ndarray
    states: np.ndarray
    degenerate: np.ndarray = None
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        s = herm(np.asarray(self.states, dtype=complex))
        if s.ndim != 3 or s.shape[0] != p.size or s.shape[1] != s.shape[2]:
            raise ValidationError("states must have shape (k, d, d) matching probs")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "states", s)
        deg = p <= 0 if self.degenerate is None else np.asarray(self.degenerate, dtype=bool)
        object.__setattr__(self, "degenerate", deg)
        if self.check:
            if np.any(p < -1e-15) or abs(p.sum() - 1.0) > 1e-10:
                raise ValidationError("probs must be a probability vector")
            for k in np.flatnonzero(~deg):
                density(s[k])

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def __len__(self) -> int:
        return self.probs.size

    def average(self) -> np.ndarray:
        return herm(np.einsum("k,kij->ij", self.probs, self.states))

    def weighted(self) -> np.ndarray:
        """The subnormalized members ``p_k * sigma_k``."""
        return self.probs[:, None, None] * self.states

    def conj(self) -> "Ensemble":
        return Ensemble(self.probs, self.states.conj(), self.degenerate, check=False)

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "probs": [float(x) for x in self.probs],
            "states": [matrix_to_json(s) for s in self.states],
        }

    @classmethod
    def from_json(cls, obj) -> "Ensemble":
        try:
            dim, probs, states = int(obj["dim"]), obj["probs"], obj["states"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed ensemble object: {exc}") from exc
        mats = [matrix_from_json(s) for s in states]
        if any(m.shape != (dim, dim) for m in mats):
            raise ValidationError("ensemble states must be dim x dim")
        return cls(np.asarray(probs, dtype=float), np.array(mats))

    @classmethod
    def from_weighted(cls, weighted, check: bool = True) -> "Ensemble":
        """Build from subnormalized operators ``p_k sigma_k``."""
        weighted = herm(np.asarray(weighted, dtype=complex))
        probs = np.clip(np.einsum("kii->k", weighted).real, 0.0, None)
        states = np.zeros_like(weighted)
        nz = probs > 1e-15
        states[nz] = weighted[nz] / probs[nz, None, None]
        return cls(probs, states, ~nz, check=check)


# --- duality -----------------------------------------------------------------


def induced_ensemble(rho, a: Povm) -> Ensemble:
    """The ensemble ``{sqrt(rho) a_j sqrt(rho) / lambda_j, lambda_j = Tr(rho a_j)}``."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (a.dim, a.dim):
        raise ValidationError("state and POVM dimensions differ")
    root = sqrtm_psd(rho)
    return Ensemble.from_weighted(root @ a.effects @ root)


def _pretty_good(ens: Ensemble) -> Povm:
    rho = ens.average()
    inv = inv_sqrtm_psd(rho)
    eff = herm(inv @ ens.weighted() @ inv)
    # off the support of rho: complement projector goes to effect 0
    eff[0] = eff[0] + (np.eye(ens.dim) - support_projector(rho))
    return Povm(eff)


def sqrt_measurement(ens: Ensemble) -> Povm:
    """Square-root ("pretty good") measurement ``rho^-1/2 p_j rho_j rho^-1/2``.

    Inverse of :func:`induced_ensemble` for full-rank states.
    """
    return _pretty_good(ens)


def dual_povm(ens: Ensemble) -> Povm:
    """The POVM ``S_k = omega^-1/2 q_k sigma_k omega^-1/2`` of an ensemble.

    Same formula as :func:`sqrt_measurement`; read as the measurement on the
    purifying system that induces ``ens``. The round trip is
    ``ensemble_from_purification(omega, dual_povm(ens.conj())) == ens``.
    """
    return _pretty_good(ens)


def ensemble_from_purification(rho, s: Povm) -> Ensemble:
    """Ensemble induced on system 1 by measuring ``s`` on system 2 of the
    canonical purification: ``q_k sigma_k = Tr_2[|r><r| (1 x S_k)]``."""
    d = s.dim
    r = canonical_purification(rho)
    big = projector(r)
    parts = [partial_trace(big @ tensor(np.eye(d), sk), [d, d], [0]) for sk in s.effects]
    return Ensemble.from_weighted(np.array(parts))


def classicalize(source: Ensemble, a: Povm) -> tuple[np.ndarray, Povm]:
    """Diagonal model with the same joint statistics of source index and outcome.

    Returns ``P = diag(p_i)`` and ``b_j = sum_i Tr(rho_i a_j) |i><i|``.
    """
    cond = np.einsum("iab,jba->ij", source.states, a.effects).real  # Tr(rho_i a_j)
    cond = np.clip(cond, 0.0, None)
    cond = cond / cond.sum(axis=1, keepdims=True)
    p = np.diag(source.probs).astype(complex)
    b = np.array([np.diag(cond[:, j]).astype(complex) for j in range(len(a))])
    return p, Povm(b, a.labels)


# --- purifications and fidelities ---------------------------------------------


def max_entangled(d: int) -> np.ndarray:
    """Unnormalized ``|I> = sum_i |i>|i>``."""
    return np.eye(d, dtype=complex).reshape(-1)


def canonical_purification(rho) -> np.ndarray:
    """``(sqrt(rho) x 1)|I>`` in the computational basis."""
    rho = np.asarray(rho, dtype=complex)
    d = rho.shape[0]
    check_dense(d * d, "purification")
    return (sqrtm_psd(rho) @ np.eye(d)).reshape(-1)


def conjugate_state(rho) -> np.ndarray:
    """Complex conjugate in the computational basis (reduced state on system 2)."""
    return np.asarray(rho, dtype=complex).conj()


@dataclass(frozen=True)
class CanonicalFidelity:
    value: float
    overlap: float


def canonical_fidelity(rho, sigma) -> CanonicalFidelity:
    """``(Tr sqrt(rho) sqrt(sigma))^2``, together with ``|<r|s>|^2`` of the
    canonical purifications computed independently."""
    value = np.trace(sqrtm_psd(rho) @ sqrtm_psd(sigma)).real ** 2
    r, s = canonical_purification(rho), canonical_purification(sigma)
    return CanonicalFidelity(float(value), float(abs(np.vdot(r, s)) ** 2))


def uhlmann_fidelity(rho, sigma) -> float:
    """``|| sqrt(rho) sqrt(sigma) ||_1^2``."""
    return trace_norm(sqrtm_psd(rho) @ sqrtm_psd(sigma)) ** 2


def trace_distance(rho, sigma) -> float:
    return 0.5 * trace_norm(np.asarray(rho) - np.asarray(sigma))


def gentle_disturbance(rho, x) -> float:
    """``|| rho - sqrt(X) rho sqrt(X) ||_1``."""
    root = sqrtm_psd(x)
    return trace_norm(rho - root @ rho @ root)


def appendix_a_report(rho, sigma) -> dict:
    """Margins (rhs - lhs) of the canonical-purification inequality suite.

    Keys: ``fid_identity`` (absolute mismatch), ``canonical_vs_optimal``,
    ``canonical_tracenorm``, ``fuchs_lower``, ``fuchs_upper``,
    ``uhlmann_vs_canonical``. Every margin should be >= 0.
    """
    dist1 = trace_norm(np.asarray(rho) - np.asarray(sigma))
    cf = canonical_fidelity(rho, sigma)
    tr_root = math.sqrt(max(cf.value, 0.0))
    r, s = canonical_purification(rho), canonical_purification(sigma)
    pur_dist = 0.5 * trace_norm(projector(r) - projector(s))
    f = uhlmann_fidelity(rho, sigma)
    return {
        "fid_identity": abs(cf.value - cf.overlap),
        "canonical_vs_optimal": tr_root - (1.0 - math.sqrt(dist1)),
        "canonical_tracenorm": (4.0 * dist1) ** 0.25 - pur_dist,
        "fuchs_lower": 0.5 * dist1 - (1.0 - math.sqrt(min(f, 1.0))),
        "fuchs_upper": math.sqrt(max(1.0 - f, 0.0)) - 0.5 * dist1,
        "uhlmann_vs_canonical": f - cf.value,
    }


# --- random instances and named examples --------------------------------------


def random_density(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Random density matrix from the induced (Hilbert-Schmidt for rank=d) measure."""
    rank = d if rank is None else rank
    g = rng.standard_normal((d, rank)) + 1j * rng.standard_normal((d, rank))
    m = g @ g.conj().T
    return herm(m / np.trace(m).real)


def random_psd_contraction(d: int, rng: np.random.Generator) -> np.ndarray:
    """Random operator with spectrum in [0, 1]."""
    u = haar_unitary(d, rng)
    return herm((u * rng.uniform(0.0, 1.0, d)) @ u.conj().T)


def random_povm(d: int, m: int, rng: np.random.Generator, rank: int | None = None) -> Povm:
    """Random POVM: random positive operators normalized by their sum."""
    rank = d if rank is None else rank
    if m * rank < d:
        raise ValidationError(f"{m} effects of rank {rank} cannot sum to the identity in dimension {d}")
    g = rng.standard_normal((m, d, rank)) + 1j * rng.standard_normal((m, d, rank))
    pos = g @ g.conj().swapaxes(-1, -2)
    inv = inv_sqrtm_psd(pos.sum(axis=0))
    return Povm(herm(inv @ pos @ inv))


def random_ensemble(d: int, k: int, rng: np.random.Generator, rank: int | None = None) -> Ensemble:
    probs = rng.dirichlet(np.ones(k))
    states = np.array([random_density(d, rng, rank) for _ in range(k)])
    return Ensemble(probs, states)


def random_ensemble_for(rho, k: int, rng: np.random.Generator, rank: int | None = None) -> Ensemble:
    """Random ensemble with prescribed average ``rho`` (via a random dual POVM)."""
    d = np.asarray(rho).shape[0]
    s = random_povm(d, k, rng, rank)
    root = sqrtm_psd(rho)
    return Ensemble.from_weighted(root @ s.effects @ root)


def computational_pvm(d: int) -> Povm:
    return Povm(np.array([projector(e) for e in np.eye(d)]))


def chrysler_states() -> np.ndarray:
    """The five real qubit states at angles pi*t/5, t = 0..4."""
    t = np.arange(5)
    return np.stack([np.cos(np.pi * t / 5), np.sin(np.pi * t / 5)], axis=1).astype(complex)


def chrysler_povm() -> Povm:
    return Povm(np.array([0.4 * projector(e) for e in chrysler_states()]))


def product_povm(a: Povm, l: int) -> Povm:
    """``a`` tensored ``l`` times; outcomes are tuples in lexicographic order."""
    check_dense(a.dim**l)
    labels, effects = [], []
    for js in itertools.product(range(len(a)), repeat=l):
        labels.append(js)
        effects.append(tensor(*(a.effects[j] for j in js)))
    return Povm(np.array(effects), labels, check=False)


def product_ensemble(ens: Ensemble, l: int) -> Ensemble:
    check_dense(ens.dim**l)
    probs, states = [], []
    for ks in itertools.product(range(len(ens)), repeat=l):
        probs.append(float(np.prod(ens.probs[list(ks)])))
        states.append(tensor(*(ens.states[k] for k in ks)))
    return Ensemble(np.array(probs), np.array(states), check=False)


def mix_povms(weights: Sequence[float], povms: Sequence[Povm]) -> Povm:
    eff = sum(w * p.effects for w, p in zip(weights, povms))
    return Povm(eff, povms[0].labels)
