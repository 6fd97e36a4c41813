import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from qmd.errors import DomainError, SizeLimitError, ValidationError
from qmd.numerics import (
    check_dense,
    eig_herm,
    inv_sqrtm_psd,
    lowrank_trace_norm,
    mat_func,
    matrix_from_json,
    matrix_to_json,
    partial_trace,
    polar,
    sqrtm_psd,
    tensor,
    trace_norm,
)
from qmd.quantum import max_entangled, random_density


def random_herm(d, rng):
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return (g + g.conj().T) / 2


def test_eig_herm_simple_cases():
    es = eig_herm(np.eye(2))
    assert np.allclose(es.values, [1, 1])
    es = eig_herm(np.diag([0.3, 0.7]))
    assert np.allclose(es.values, [0.7, 0.3])


def test_eig_herm_reconstructs(rng):
    m = random_herm(5, rng)
    es = eig_herm(m)
    assert np.all(np.diff(es.values) <= 0)
    assert np.linalg.norm(m - (es.vectors * es.values) @ es.vectors.conj().T) < 1e-9
    assert np.abs(es.vectors.conj().T @ es.vectors - np.eye(5)).max() < 1e-10


def test_eig_herm_degenerate_order_is_deterministic(rng):
    u = scipy.linalg.qr(rng.standard_normal((4, 4)))[0]
    m = u @ np.diag([2.0, 1.0, 1.0, 0.5]) @ u.T
    a, b = eig_herm(m), eig_herm(m + 0.0)
    assert np.array_equal(a.vectors, b.vectors)
    first = np.array([v[np.flatnonzero(np.abs(v) > 1e-12)[0]] for v in a.vectors.T])
    assert np.all(np.abs(first.imag) < 1e-12) and np.all(first.real > 0)


def test_mat_func_cutoff_convention():
    assert np.allclose(sqrtm_psd(np.diag([4.0, 0.0])), np.diag([2.0, 0.0]))
    p = np.array([[1, 0], [0, 0]], dtype=complex)
    assert np.allclose(inv_sqrtm_psd(p), p)


def test_mat_func_domain_error():
    with pytest.raises(DomainError):
        mat_func(np.diag([1.0, -1.0]), np.sqrt, cutoff=-np.inf)


def test_sqrt_round_trip(rng):
    rho = random_density(4, rng)
    r = sqrtm_psd(rho)
    assert np.abs(r @ r - rho).max() < 1e-10


def test_trace_norm_examples(rng):
    assert trace_norm(np.diag([0.5, -0.5])) == pytest.approx(1.0)
    assert trace_norm(np.zeros((3, 3))) == 0
    m = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    assert abs(trace_norm(m) - scipy.linalg.svdvals(m).sum()) < 1e-9


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_trace_norm_is_sum_of_abs_eigenvalues(seed, d):
    m = random_herm(d, np.random.default_rng(seed))
    assert abs(trace_norm(m) - np.abs(np.linalg.eigvalsh(m)).sum()) < 1e-9


@given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.integers(1, 8))
def test_lowrank_trace_norm_matches_dense(seed, n, r):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((n, r)) + 1j * rng.standard_normal((n, r))
    c = rng.standard_normal(r)
    assert abs(lowrank_trace_norm(v, c) - trace_norm((v * c) @ v.conj().T)) < 1e-9 * max(1, np.abs(c).sum() * n)


def test_lowrank_trace_norm_cancellation():
    v = np.array([[0.6], [0.8j]])
    assert lowrank_trace_norm(np.concatenate([v, v], axis=1), np.array([1.0, -1.0])) < 1e-15


def test_partial_trace_of_maximally_entangled():
    i = max_entangled(3)
    out = partial_trace(np.outer(i, i.conj()) / 3, [3, 3], [0])
    assert np.allclose(out, np.eye(3) / 3)


def test_tensor_partial_trace_round_trip(rng):
    a = random_herm(2, rng)
    b = random_herm(3, rng)
    assert np.abs(partial_trace(tensor(a, b), [2, 3], [0]) - a * np.trace(b)).max() < 1e-12
    assert np.abs(partial_trace(tensor(a, b), [2, 3], [1]) - b * np.trace(a)).max() < 1e-12


@given(st.integers(0, 2**32 - 1))
def test_partial_trace_keeps_trace_and_positivity(seed):
    rng = np.random.default_rng(seed)
    rho = random_density(12, rng)
    for keep in ([0], [1], [2], [0, 2]):
        out = partial_trace(rho, [2, 3, 2], keep)
        assert abs(np.trace(out) - 1) < 1e-12
        assert np.linalg.eigvalsh(out).min() > -1e-10


def test_polar_of_unitary(rng):
    u = scipy.linalg.qr(rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3)))[0]
    w, p = polar(u)
    assert np.abs(w - u).max() < 1e-9
    assert np.abs(p - np.eye(3)).max() < 1e-9


@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4))
def test_polar_factorizes(seed, rows, cols, rank):
    rng = np.random.default_rng(seed)
    m = (rng.standard_normal((rows, rank)) + 1j * rng.standard_normal((rows, rank))) @ rng.standard_normal((rank, cols))
    u, p = polar(m)
    assert np.abs(u @ p - m).max() < 1e-9
    assert np.abs(p @ p - m.conj().T @ m).max() < 1e-9
    if rows >= cols:
        assert np.abs(u.conj().T @ u - np.eye(cols)).max() < 1e-9
    else:
        assert np.abs(u @ u.conj().T - np.eye(rows)).max() < 1e-9


def test_polar_completion_is_deterministic():
    m = np.diag([1.0, 0.0]).astype(complex)
    u, _ = polar(m)
    assert np.allclose(u, np.eye(2))


def test_mat_func_identity_on_support(rng):
    rho = random_density(4, rng, rank=2)
    assert np.abs(mat_func(rho, lambda x: x) - rho).max() < 1e-10


def test_dense_limit(monkeypatch):
    check_dense(4096)
    with pytest.raises(SizeLimitError):
        check_dense(4097)
    monkeypatch.setenv("QMD_DENSE_LIMIT", "8")
    with pytest.raises(SizeLimitError):
        check_dense(16)
    monkeypatch.setenv("QMD_DENSE_LIMIT", "many")
    with pytest.raises(ValidationError):
        check_dense(2)


def test_matrix_json_round_trip(rng):
    m = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
    obj = matrix_to_json(m)
    assert obj["rows"] == 2 and obj["cols"] == 3
    assert np.array_equal(matrix_from_json(obj), m)
    obj["data"][0] = [float("nan"), 0.0]
    with pytest.raises(ValidationError):
        matrix_from_json(obj)
