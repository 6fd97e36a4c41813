import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qmd.errors import ValidationError
from qmd.numerics import partial_trace, sqrtm_psd, trace_norm
from qmd.quantum import (
    Ensemble,
    Povm,
    SubPovm,
    appendix_a_report,
    canonical_fidelity,
    canonical_purification,
    chrysler_povm,
    chrysler_states,
    classicalize,
    computational_pvm,
    density,
    dual_povm,
    ensemble_from_purification,
    gentle_disturbance,
    induced_ensemble,
    projector,
    random_density,
    random_ensemble,
    random_povm,
    random_psd_contraction,
    sqrt_measurement,
    trace_distance,
    uhlmann_fidelity,
)

seeds = st.integers(0, 2**32 - 1)


def test_density_validation():
    density(np.eye(2) / 2)
    with pytest.raises(ValidationError):
        density(np.diag([1.2, -0.2]))
    with pytest.raises(ValidationError):
        density(np.eye(2))


def test_povm_validation_and_json(rng):
    a = random_povm(3, 4, rng)
    b = Povm.from_json(a.to_json())
    assert np.abs(a.effects - b.effects).max() < 1e-15
    with pytest.raises(ValidationError):
        Povm(np.array([np.eye(2), np.eye(2)]))
    with pytest.raises(ValidationError):
        Povm.from_json({"dim": 2})


def test_sub_povm_completion():
    sub = SubPovm(np.array([np.diag([0.5, 0.0]), np.diag([0.0, 0.25])]))
    full = sub.completed(1)
    assert np.allclose(full.total(), np.eye(2))
    with pytest.raises(ValidationError):
        SubPovm(np.array([np.eye(2), np.diag([0.1, 0.0])]))


def test_induced_ensemble_computational_basis():
    ens = induced_ensemble(np.eye(2) / 2, computational_pvm(2))
    assert np.allclose(ens.probs, [0.5, 0.5])
    assert np.allclose(ens.states[0], np.diag([1, 0]))
    assert np.allclose(ens.states[1], np.diag([0, 1]))


def test_induced_ensemble_chrysler():
    ens = induced_ensemble(np.eye(2) / 2, chrysler_povm())
    assert np.allclose(ens.probs, 0.2)
    for s, e in zip(ens.states, chrysler_states()):
        assert np.abs(s - projector(e)).max() < 1e-12


def test_induced_ensemble_zero_outcome_keeps_placeholder():
    a = Povm(np.array([np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]))
    ens = induced_ensemble(np.diag([1.0, 0.0]), a)
    assert ens.degenerate.tolist() == [False, True]
    assert np.all(ens.states[1] == 0)


@given(seeds, st.integers(2, 4), st.integers(1, 5))
def test_induced_ensemble_averages_to_rho(seed, d, m):
    rng = np.random.default_rng(seed)
    rho = random_density(d, rng)
    ens = induced_ensemble(rho, random_povm(d, m, rng))
    assert np.abs(ens.average() - rho).max() < 1e-10


@given(seeds, st.integers(2, 4), st.integers(2, 5))
def test_sqrt_measurement_inverts_induced_ensemble(seed, d, m):
    rng = np.random.default_rng(seed)
    rho = random_density(d, rng)
    a = random_povm(d, m, rng)
    assert np.abs(sqrt_measurement(induced_ensemble(rho, a)).effects - a.effects).max() < 1e-9
    ens = random_ensemble(d, m, rng)
    back = induced_ensemble(ens.average(), sqrt_measurement(ens))
    assert np.abs(back.weighted() - ens.weighted()).max() < 1e-9


def test_sqrt_measurement_orthogonal_states_gives_pvm():
    ens = Ensemble(np.full(3, 1 / 3), np.array([projector(e) for e in np.eye(3)]))
    assert np.allclose(sqrt_measurement(ens).effects, computational_pvm(3).effects)


def test_sqrt_measurement_rank_deficient_completion():
    ens = Ensemble(np.array([1.0]), np.array([np.diag([1.0, 0.0])]))
    a = sqrt_measurement(ens)
    assert np.allclose(a.effects[0], np.eye(2))


def test_dual_povm_examples(rng):
    rho = random_density(3, rng)
    assert np.allclose(dual_povm(Ensemble(np.ones(1), rho[None])).effects[0], np.eye(3))
    vals, vecs = np.linalg.eigh(rho)
    ens = Ensemble(vals, np.array([projector(v) for v in vecs.T]))
    for s, v in zip(dual_povm(ens).effects, vecs.T):
        assert np.abs(s - projector(v)).max() < 1e-9


@given(seeds, st.integers(2, 4), st.integers(1, 5))
def test_purification_round_trip(seed, d, k):
    rng = np.random.default_rng(seed)
    ens = random_ensemble(d, k, rng)
    s = dual_povm(ens.conj())
    back = ensemble_from_purification(ens.average(), s)
    assert np.abs(back.weighted() - ens.weighted()).max() < 1e-9


def test_canonical_purification_examples(rng):
    r = canonical_purification(np.diag([1.0, 0.0]))
    assert np.allclose(r, [1, 0, 0, 0])
    r = canonical_purification(np.eye(2) / 2)
    assert np.allclose(np.linalg.svd(r.reshape(2, 2), compute_uv=False) ** 2, [0.5, 0.5])
    rho = random_density(4, rng)
    big = np.outer(canonical_purification(rho), canonical_purification(rho).conj())
    assert np.abs(partial_trace(big, [4, 4], [0]) - rho).max() < 1e-10
    assert np.abs(partial_trace(big, [4, 4], [1]) - rho.conj()).max() < 1e-10


def test_fidelity_examples():
    rho = np.diag([0.3, 0.7])
    assert canonical_fidelity(rho, rho).value == pytest.approx(1.0)
    assert uhlmann_fidelity(rho, rho) == pytest.approx(1.0)
    assert canonical_fidelity(np.diag([1.0, 0]), np.diag([0, 1.0])).value == pytest.approx(0.0)
    p, q = 0.3, 0.8
    expected = (np.sqrt(p * q) + np.sqrt((1 - p) * (1 - q))) ** 2
    assert uhlmann_fidelity(np.diag([p, 1 - p]), np.diag([q, 1 - q])) == pytest.approx(expected)


@given(seeds, st.integers(2, 5))
def test_fidelity_suite(seed, d):
    rng = np.random.default_rng(seed)
    rho, sigma = random_density(d, rng), random_density(d, rng, rank=int(rng.integers(1, d + 1)))
    cf = canonical_fidelity(rho, sigma)
    assert abs(cf.value - cf.overlap) < 1e-8
    rep = appendix_a_report(rho, sigma)
    assert rep["fid_identity"] < 1e-8
    assert min(v for k, v in rep.items() if k != "fid_identity") >= -1e-9


@given(seeds, st.integers(2, 4), st.sampled_from([0.01, 0.1, 0.3]))
def test_gentle_operator(seed, d, lam):
    rng = np.random.default_rng(seed)
    rho = random_density(d, rng)
    x = random_psd_contraction(d, rng)
    # mix towards the identity until Tr(rho X) >= 1 - lam
    t = max(0.0, (1 - lam - np.trace(rho @ x).real) / (1 - np.trace(rho @ x).real))
    x = (1 - t) * x + t * np.eye(d)
    assert np.trace(rho @ x).real >= 1 - lam - 1e-12
    assert gentle_disturbance(rho, x) <= np.sqrt(8 * lam) + 1e-9
    sub = 0.8 * rho
    assert gentle_disturbance(sub, x) <= np.sqrt(8 * lam) + 1e-9


def test_trace_distance_and_gentle_zero():
    rho = np.diag([0.5, 0.5])
    assert trace_distance(rho, np.diag([1.0, 0.0])) == pytest.approx(0.5)
    assert gentle_disturbance(rho, np.eye(2)) < 1e-12


def test_classicalize_chrysler_source():
    v = chrysler_states()
    src = Ensemble(np.array([0.5, 0.5]), np.array([projector(v[0]), projector(v[2])]))
    a = chrysler_povm()
    p, b = classicalize(src, a)
    assert np.allclose(p, np.diag([0.5, 0.5]))
    assert b.dim == 2 and len(b) == 5
    expected = np.array([[0.4 * abs(np.vdot(v[j], v[i])) ** 2 for j in range(5)] for i in (0, 2)])
    got = np.array([[b.effects[j][i, i].real for j in range(5)] for i in range(2)])
    assert np.abs(got - expected).max() < 1e-12
    assert np.abs(b.total() - np.eye(2)).max() < 1e-10


def test_classicalize_preserves_joint_statistics(rng):
    src = random_ensemble(3, 4, rng)
    a = random_povm(3, 5, rng)
    p, b = classicalize(src, a)
    joint = src.probs[:, None] * np.einsum("iab,jba->ij", src.states, a.effects).real
    joint_c = np.array([[p[i, i].real * b.effects[j][i, i].real for j in range(5)] for i in range(4)])
    assert np.abs(joint - joint_c).max() < 1e-12


def test_ensemble_json_round_trip(rng):
    ens = random_ensemble(2, 3, rng)
    back = Ensemble.from_json(ens.to_json())
    assert np.abs(back.weighted() - ens.weighted()).max() < 1e-15


def test_sqrt_of_chrysler_effects_are_rank_one():
    for e in chrysler_povm().effects:
        assert np.linalg.matrix_rank(sqrtm_psd(e), tol=1e-10) == 1
    assert trace_norm(chrysler_povm().total() - np.eye(2)) < 1e-12


def test_random_povm_rejects_impossible_rank(rng):
    with pytest.raises(ValidationError):
        random_povm(3, 2, rng, rank=1)
