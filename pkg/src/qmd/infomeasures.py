"""Entropies (in bits), entropy defect, mutual information and the
information bounds that can be checked per instance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .numerics import eig_herm, herm
from .quantum import Ensemble, Povm, random_povm

ZERO_EIG = 1e-14


def _plogp(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    nz = p > ZERO_EIG
    out[nz] = -p[nz] * np.log2(p[nz])
    return out


def shannon_entropy(p) -> float:
    p = np.asarray(p, dtype=float).reshape(-1)
    if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
        raise ValidationError("not a probability vector")
    return float(_plogp(np.clip(p, 0.0, None)).sum())


def binary_entropy(x: float) -> float:
    return float(_plogp(np.array([x, 1.0 - x])).sum())


def von_neumann_entropy(rho) -> float:
    vals = np.linalg.eigvalsh(herm(rho))
    return float(_plogp(np.clip(vals, 0.0, None)).sum())


def _weighted_entropy(weighted: np.ndarray) -> float:
    """sum_k p_k H(sigma_k) from the subnormalized ``p_k sigma_k``."""
    vals = np.clip(np.linalg.eigvalsh(herm(weighted)), 0.0, None)
    probs = vals.sum(axis=-1)
    # p H(sigma) = -sum v log v + p log p
    return float(_plogp(vals).sum() - _plogp(probs).sum())


def conditional_entropy(ens: Ensemble) -> float:
    return _weighted_entropy(ens.weighted())


def entropy_defect(ens: Ensemble) -> float:
    """Holevo quantity ``H(average) - sum_k p_k H(sigma_k)``."""
    return von_neumann_entropy(ens.average()) - conditional_entropy(ens)


def mutual_information(joint) -> float:
    """``H(X) + H(Y) - H(XY)`` of a nonnegative table summing to one."""
    j = np.asarray(joint, dtype=float)
    if j.ndim != 2 or np.any(j < -1e-12) or abs(j.sum() - 1.0) > 1e-9:
        raise ValidationError("joint distribution must be a nonnegative table summing to 1")
    j = np.clip(j, 0.0, None)
    return float(_plogp(j.sum(axis=1)).sum() + _plogp(j.sum(axis=0)).sum() - _plogp(j).sum())


def joint_distribution(ens: Ensemble, s: Povm) -> np.ndarray:
    """Table ``Pr{Y=j, X=i} = p_j Tr(sigma_j S_i)``, rows indexed by j."""
    table = np.einsum("jab,iba->ji", ens.weighted(), s.effects).real
    return np.clip(table, 0.0, None)


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float
    holds: bool


def holevo_check(ens: Ensemble, s: Povm, tol: float = 1e-9) -> BoundCheck:
    """Compare ``I(X:Y)`` of measuring ``s`` on ``ens`` with its entropy defect."""
    joint = joint_distribution(ens, s)
    lhs = mutual_information(joint / joint.sum())
    rhs = entropy_defect(ens)
    return BoundCheck(lhs, rhs, lhs <= rhs + tol)


def fano_entropy_bound(p, q, tol: float = 1e-12) -> BoundCheck:
    """``|H(P) - H(Q)| <= t log a + 2 H(t, 1-t)`` with t the total variation."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValidationError("distributions live on different sets")
    t = 0.5 * float(np.abs(p - q).sum())
    lhs = abs(shannon_entropy(p) - shannon_entropy(q))
    rhs = t * np.log2(p.size) + 2.0 * binary_entropy(t)
    return BoundCheck(lhs, float(rhs), lhs <= rhs + tol)


def accessible_information_lower_bound(
    ens: Ensemble, rng: np.random.Generator, samples: int = 200, outcomes: int | None = None
) -> float:
    """Best mutual information over randomly sampled measurements.

    Includes the eigenbasis measurement of every member; a lower bound on the
    accessible information only.
    """
    d = ens.dim
    outcomes = d if outcomes is None else outcomes
    best = 0.0
    cands = []
    for st in ens.states:
        vecs = eig_herm(st).vectors
        cands.append(Povm(np.einsum("ai,bi->iab", vecs, vecs.conj())))
    cands += [random_povm(d, outcomes, rng, rank=1) for _ in range(samples)]
    for s in cands:
        joint = joint_distribution(ens, s)
        best = max(best, mutual_information(joint / joint.sum()))
    return best
