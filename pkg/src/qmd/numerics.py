"""Dense complex-matrix kernel.

Hermitian eigendecomposition with a reproducible ordering, spectral matrix
functions with a pseudo-function convention, trace norms, tensor products,
partial traces, polar decompositions and the repo-wide matrix JSON schema.
"""

from __future__ import annotations

import math
import os
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import DomainError, NumericalError, SizeLimitError, ValidationError

DEFAULT_DENSE_LIMIT = 4096
HERM_TOL = 1e-12
EIG_TIE_TOL = 1e-10


def dense_limit() -> int:
    """Largest matrix dimension held explicitly (``QMD_DENSE_LIMIT`` overrides)."""
    raw = os.environ.get("QMD_DENSE_LIMIT")
    if raw is None:
        return DEFAULT_DENSE_LIMIT
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValidationError(f"QMD_DENSE_LIMIT must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ValidationError("QMD_DENSE_LIMIT must be positive")
    return value


def check_dense(dim: int, what: str = "operator") -> None:
    limit = dense_limit()
    if dim > limit:
        raise SizeLimitError(f"{what} dimension {dim} exceeds dense limit {limit}")


def herm(m) -> np.ndarray:
    """Return the Hermitian part of ``m`` as a complex array."""
    m = np.asarray(m, dtype=complex)
    return 0.5 * (m + m.conj().swapaxes(-1, -2))


def as_herm(m, *, tol: float = HERM_TOL) -> np.ndarray:
    """Validate near-Hermiticity and symmetrize."""
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("matrix has non-finite entries")
    scale = max(np.max(np.abs(m), initial=0.0), 1.0)
    if np.max(np.abs(m - m.conj().T), initial=0.0) > 1e3 * tol * scale:
        raise ValidationError("matrix is not Hermitian")
    return herm(m)


class EigenSystem(NamedTuple):
    values: np.ndarray
    vectors: np.ndarray


def _phase_fix(vectors: np.ndarray) -> np.ndarray:
    # first component with non-negligible magnitude made real positive
    out = vectors.copy()
    for k in range(out.shape[1]):
        col = out[:, k]
        idx = int(np.argmax(np.abs(col) > 1e-8))
        z = col[idx]
        if abs(z) > 0:
            out[:, k] = col * (abs(z) / z)
    return out


def eig_herm(m) -> EigenSystem:
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending.

    Eigenvectors are phase-fixed so that their first significant component is
    real and positive. Within a degenerate cluster (relative gap below
    ``EIG_TIE_TOL``) the order is lexicographic on the phase-fixed components,
    larger first.
    """
    m = herm(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericalError("non-finite input to eig_herm", residual=math.inf)
    try:
        vals, vecs = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(str(exc), residual=math.inf) from exc
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], _phase_fix(vecs[:, order])

    scale = max(float(np.max(np.abs(vals), initial=0.0)), 1.0)
    n = len(vals)
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and vals[start] - vals[stop] <= EIG_TIE_TOL * scale:
            stop += 1
        if stop - start > 1:
            block = vecs[:, start:stop]
            keys = [tuple(np.round(np.concatenate([c.real, c.imag]), 9)) for c in block.T]
            sub = sorted(range(stop - start), key=lambda i: keys[i], reverse=True)
            vecs[:, start:stop] = block[:, sub]
            vals[start:stop] = vals[start:stop][sub]
        start = stop

    residual = np.linalg.norm(m - (vecs * vals) @ vecs.conj().T)
    if residual > 1e-9 * max(1.0, np.linalg.norm(m)):
        raise NumericalError("eigendecomposition did not reconstruct input", residual=residual)
    return EigenSystem(vals, vecs)


def default_cutoff(values: np.ndarray) -> float:
    """Eigenvalue cutoff ``dim * 1e-12 * max|eigenvalue|``."""
    values = np.asarray(values)
    if values.size == 0:
        return 0.0
    return values.size * 1e-12 * float(np.max(np.abs(values)))


def mat_func(m, f: Callable[[np.ndarray], np.ndarray], cutoff: float | None = None) -> np.ndarray:
    """Apply ``f`` to the eigenvalues of Hermitian ``m``.

    Eigenvalues below ``cutoff`` are mapped to 0 (pseudo-function), so
    ``mat_func(rho, lambda x: x**-0.5)`` is the inverse square root on the
    support of ``rho``.
    """
    vals, vecs = np.linalg.eigh(herm(m))
    if cutoff is None:
        cutoff = default_cutoff(vals)
    keep = vals >= cutoff
    out = np.zeros_like(vals)
    if np.any(keep):
        with np.errstate(all="ignore"):
            fv = np.asarray(f(vals[keep]), dtype=float)
        if not np.all(np.isfinite(fv)):
            raise DomainError("function undefined at a retained eigenvalue")
        out[keep] = fv
    return herm((vecs * out) @ vecs.conj().T)


def sqrtm_psd(m, cutoff: float | None = None) -> np.ndarray:
    return mat_func(m, np.sqrt, cutoff)


def inv_sqrtm_psd(m, cutoff: float | None = None) -> np.ndarray:
    return mat_func(m, lambda x: 1.0 / np.sqrt(x), cutoff)


def support_projector(m, cutoff: float | None = None) -> np.ndarray:
    return mat_func(m, np.ones_like, cutoff)


def trace_norm(m) -> float:
    """Sum of singular values."""
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2:
        raise ValidationError(f"expected a matrix, got shape {m.shape}")
    if m.size == 0:
        return 0.0
    if m.shape[0] == m.shape[1] and np.allclose(m, m.conj().T, atol=1e-14, rtol=0):
        return float(np.sum(np.abs(np.linalg.eigvalsh(herm(m)))))
    return float(np.sum(np.linalg.svd(m, compute_uv=False)))


def lowrank_trace_norm(factors: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Trace norms of ``V diag(c) V^dagger`` for stacks of thin factors.

    ``factors`` has shape (..., n, r) and ``coeffs`` (..., r); with ``V = QR``
    only the small matrix ``R diag(c) R^dagger`` is diagonalized.
    """
    v = np.asarray(factors, dtype=complex)
    c = np.asarray(coeffs, dtype=float)
    r = np.linalg.qr(v, mode="r")
    core = (r * c[..., None, :]) @ r.conj().swapaxes(-1, -2)
    return np.sum(np.abs(np.linalg.eigvalsh(herm(core))), axis=-1)


def tensor(*ms) -> np.ndarray:
    """Kronecker product of the arguments, left to right."""
    if not ms:
        return np.ones((1, 1), dtype=complex)
    out = np.asarray(ms[0], dtype=complex)
    for m in ms[1:]:
        out = np.kron(out, np.asarray(m, dtype=complex))
    return out


def tensor_power(m, l: int) -> np.ndarray:
    m = np.asarray(m, dtype=complex)
    check_dense(m.shape[0] ** l)
    return tensor(*([m] * l))


def partial_trace(m, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Trace out every factor not in ``keep``; kept factors stay in order."""
    m = np.asarray(m, dtype=complex)
    dims = [int(d) for d in dims]
    n = len(dims)
    total = int(np.prod(dims))
    if m.shape != (total, total):
        raise ValidationError(f"matrix shape {m.shape} does not match dims {dims}")
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= n for k in keep):
        raise ValidationError(f"keep indices {keep} out of range for {n} factors")
    t = m.reshape(dims + dims)
    drop = [k for k in range(n) if k not in keep]
    # contract each dropped pair, highest index first so positions stay valid
    for k in sorted(drop, reverse=True):
        cur = t.ndim // 2
        t = np.trace(t, axis1=k, axis2=k + cur)
    kd = int(np.prod([dims[k] for k in keep])) if keep else 1
    return t.reshape(kd, kd)


def _complete_isometry(u: np.ndarray, rank_cols: np.ndarray) -> np.ndarray:
    """Replace columns flagged False by an orthonormal extension (Gram-Schmidt
    over the standard basis in order)."""
    n_rows, n_cols = u.shape
    basis = [u[:, k] for k in range(n_cols) if rank_cols[k]]
    extra = []
    for e in np.eye(n_rows, dtype=complex):
        if len(basis) + len(extra) >= n_cols:
            break
        v = e.copy()
        for b in basis + extra:
            v = v - b * np.vdot(b, v)
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            extra.append(v / nv)
    out = u.copy()
    it = iter(extra)
    for k in range(n_cols):
        if not rank_cols[k]:
            out[:, k] = next(it)
    return out


def polar(m) -> tuple[np.ndarray, np.ndarray]:
    """Polar decomposition ``m = u @ p`` with ``p = sqrt(m^dagger m)``.

    ``u`` is unitary for square ``m``, an isometry for tall ``m`` and a
    co-isometry (orthonormal rows) for wide ``m``. Where ``m`` is rank
    deficient, ``u`` is completed by Gram-Schmidt over the standard basis.
    """
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2:
        raise ValidationError(f"polar needs a matrix, got shape {m.shape}")
    p = sqrtm_psd(m.conj().T @ m)
    w, s, vh = np.linalg.svd(m, full_matrices=False)
    tol = max(m.shape) * 1e-12 * (s[0] if s.size else 0.0)
    good = s > tol
    if m.shape[0] >= m.shape[1]:
        w = w.copy()
        w[:, ~good] = 0
        u = _complete_isometry(w, good) @ vh
    else:
        v = vh.conj().T.copy()
        v[:, ~good] = 0
        u = w @ _complete_isometry(v, good).conj().T
    return u, p


def haar_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


# --- matrix JSON -----------------------------------------------------------


def matrix_to_json(m) -> dict:
    m = np.asarray(m, dtype=complex)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    rows, cols = m.shape
    flat = m.reshape(-1)
    return {"rows": rows, "cols": cols, "data": [[float(z.real), float(z.imag)] for z in flat]}


def matrix_from_json(obj) -> np.ndarray:
    try:
        rows, cols, data = int(obj["rows"]), int(obj["cols"]), obj["data"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed matrix object: {exc}") from exc
    if rows < 1 or cols < 1:
        raise ValidationError("matrix dimensions must be positive")
    if len(data) != rows * cols:
        raise ValidationError(f"expected {rows * cols} entries, got {len(data)}")
    try:
        arr = np.array([complex(float(re), float(im)) for re, im in data], dtype=complex)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"malformed matrix entry: {exc}") from exc
    if not np.all(np.isfinite(arr)):
        raise ValidationError("matrix has non-finite entries")
    return arr.reshape(rows, cols)
