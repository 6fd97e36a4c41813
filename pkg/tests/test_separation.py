import json

import numpy as np
import pytest

from qmd.errors import SizeLimitError, ValidationError
from qmd.numerics import herm, tensor
from qmd.quantum import (
    Ensemble,
    Povm,
    chrysler_povm,
    computational_pvm,
    induced_ensemble,
    random_density,
    random_ensemble_for,
    random_povm,
)
from qmd.separation import (
    SeparationParams,
    SeparationResult,
    build_separation,
    chernoff_bound,
    chernoff_check,
    condition_chain,
    converse_bounds,
    cm_error,
    cp_error,
    independence_deficit,
    marginal_povm,
    product_source_gamma,
    purification_distance,
    rate_sizes,
    sampled_cp_errors,
)

HALF = np.eye(2) / 2


@pytest.fixture(scope="module")
def chrysler3():
    return build_separation(HALF, chrysler_povm(), SeparationParams(l=3, seed=42))


@pytest.fixture(scope="module")
def factor_mode():
    rng = np.random.default_rng(5)
    rho = random_density(2, rng)
    a = random_povm(2, 3, rng)
    return build_separation(rho, a, SeparationParams(l=3, delta=1.0, M=6, N=3, seed=1))


def test_params_validation():
    for bad in [dict(l=0), dict(l=2, epsilon=1.0), dict(l=2, delta=-1), dict(l=2, M=0), dict(l=2, fill="x")]:
        with pytest.raises(ValidationError):
            SeparationParams(**bad)


def test_rate_sizes():
    assert rate_sizes(1.0, 1.5, 4, 0.0, 0.0) == (16, 4)
    with pytest.raises(SizeLimitError):
        rate_sizes(10.0, 10.0, 10, 3.0, 0.0)


def test_cm_error_example():
    a = computational_pvm(2)
    big = Povm(np.array([np.eye(2), np.zeros((2, 2))], dtype=complex))
    assert cm_error(HALF, a, big) == pytest.approx(0.5)
    assert cm_error(HALF, a, a) == 0


def test_determinism(chrysler3):
    again = build_separation(HALF, chrysler_povm(), SeparationParams(l=3, seed=42))
    assert again.cm_error == chrysler3.cm_error
    for c, d in zip(chrysler3.components, again.components):
        assert np.array_equal(c.strings, d.strings) and np.array_equal(c.counts, d.counts)
    other = build_separation(HALF, chrysler_povm(), SeparationParams(l=3, seed=43))
    assert other.cm_error != chrysler3.cm_error


def test_components_are_povms(chrysler3):
    p = chrysler3.params
    for nu in range(p.N):
        comp = chrysler3.component_povm(nu)
        comp.validate()
        assert np.count_nonzero(np.abs(comp.effects).max(axis=(1, 2)) > 1e-12) <= p.M


@pytest.mark.parametrize("which", ["chrysler3", "factor_mode"])
def test_cm_matches_dense(which, request):
    res = request.getfixturevalue(which)
    omega = tensor(*([res.rho] * res.params.l))
    dense = cm_error(omega, res.target_povm(), res.average_povm())
    assert abs(dense - res.cm_error) < 1e-9


def test_factor_mode_used(factor_mode):
    assert factor_mode.diagnostics["mode"] == "factor"


@pytest.mark.parametrize("which", ["chrysler3", "factor_mode"])
def test_cp_below_cm(which, request):
    res = request.getfixturevalue(which)
    vals = sampled_cp_errors(res, 12, np.random.default_rng(3))
    assert vals.max() <= res.cm_error + 1e-9


def test_cp_dual_matches_dense(factor_mode, rng):
    res = factor_mode
    omega = tensor(*([res.rho] * res.params.l))
    s = random_povm(omega.shape[0], 2, rng).effects
    vals, vecs = np.linalg.eigh(omega)
    sq = (vecs * np.sqrt(vals)) @ vecs.conj().T
    states = np.array([herm(sq @ x @ sq) for x in s])
    probs = np.einsum("kaa->k", states).real
    src = Ensemble(probs, states / probs[:, None, None])
    dense = cp_error(src, res.target_povm(), res.average_povm())
    assert abs(dense - res.cp_error_dual(s)) < 1e-9


def test_cp_product_matches_dense(chrysler3, rng):
    letter = random_ensemble_for(HALF, 2, rng)
    big = Ensemble(
        np.array([np.prod(letter.probs[list(k)]) for k in np.ndindex(*(2,) * 3)]),
        np.array([tensor(*[letter.states[x] for x in k]) for k in np.ndindex(*(2,) * 3)]),
    )
    dense = cp_error(big, chrysler3.target_povm(), chrysler3.average_povm())
    assert abs(dense - chrysler3.cp_error_product(letter)) < 1e-9


def test_purification_distance_equals_cm(rng):
    rho = random_density(3, rng)
    a, b = random_povm(3, 3, rng), random_povm(3, 3, rng)
    assert abs(purification_distance(rho, a, b) - cm_error(rho, a, b)) < 1e-10


def test_extrinsic_single_component():
    a = computational_pvm(2)
    res = build_separation(HALF, a, SeparationParams(l=1, seed=0))
    assert res.params.N == 1
    ext = res.extrinsic()
    gamma = product_source_gamma(res, random_ensemble_for(HALF, 2, np.random.default_rng(0)))
    joint = ext.apply(gamma)
    assert joint.shape[1] == 1
    assert independence_deficit(joint) < 1e-12
    assert abs(joint.sum() - 1) < 1e-12


def test_extrinsic_rows_are_distributions(chrysler3):
    ext = chrysler3.extrinsic()
    for j in range(8):
        row = ext.row(j)
        assert abs(row.sum() - 1) < 1e-12 and row.min() >= 0


def test_independence_deficit_bounded_by_cm(chrysler3, rng):
    ext = chrysler3.extrinsic()
    for _ in range(5):
        gamma = product_source_gamma(chrysler3, random_ensemble_for(HALF, 2, rng))
        assert independence_deficit(ext.apply(gamma)) <= chrysler3.cm_error + 1e-9


def test_independence_deficit_examples():
    assert independence_deficit(np.outer([0.3, 0.7], [0.5, 0.5])) == pytest.approx(0.0, abs=1e-15)
    assert independence_deficit(np.eye(2) / 2) == pytest.approx(0.5)


def test_json_round_trip(chrysler3):
    obj = json.loads(json.dumps(chrysler3.to_json()))
    back = SeparationResult.from_json(obj)
    assert abs(back.cm_error - chrysler3.cm_error) < 1e-12
    with pytest.raises(ValidationError):
        SeparationResult.from_json({"rho": []})


def test_sentinel_fill():
    res = build_separation(HALF, chrysler_povm(), SeparationParams(l=2, seed=3, fill="sentinel"))
    assert res.sentinel == 25
    comp = res.component_povm(0)
    comp.validate()
    assert res.outcome_labels()[-1] == "fill"


def test_marginal_of_product(rng):
    rho = random_density(2, rng)
    a = random_povm(2, 3, rng)
    labels = [tuple(k) for k in np.ndindex(3, 3)]
    big = Povm(np.array([np.kron(a.effects[i], a.effects[j]) for i, j in labels]), labels)
    for k in range(2):
        assert np.abs(marginal_povm(big, k, rho).effects - a.effects).max() < 1e-10


def test_marginal_from_result_matches_dense(chrysler3):
    dense = chrysler3.average_povm()
    for k in range(3):
        m1 = marginal_povm(chrysler3, k, HALF).effects
        m2 = marginal_povm(dense, k, HALF).effects
        assert np.abs(m1 - m2).max() < 1e-10


def test_condition_chain_ordering(chrysler3, rng):
    src = random_ensemble_for(HALF, 3, rng)
    gain = rng.uniform(-1, 1, size=(3, 5))
    rep = condition_chain(chrysler3, chrysler_povm(), HALF, src, gain)
    assert rep.c0 <= rep.c1 + 1e-12 <= rep.c2 + 2e-12 <= rep.c3 + 3e-12
    for eps in (1e-3, 0.05, 0.2, 1.0):
        assert rep.chain_consistent(eps)


def test_gain_corollary(chrysler3, rng):
    src = random_ensemble_for(HALF, 2, rng)
    gain = rng.uniform(0, 1, size=(2, 5))
    assert condition_chain(chrysler3, chrysler_povm(), HALF, src, gain).c0 <= chrysler3.cm_error + 1e-9


def test_chernoff_constant_family():
    family = (np.ones(1), np.eye(2)[None].astype(complex))
    res = chernoff_check(2, 50, 0.1, 1.0, 500, seed=0, family=family)
    assert res.failure_rate == 0 and res.holds


def test_chernoff_bound_values():
    assert chernoff_bound(1, 0, 0.1, 0.5) == 2.0
    assert chernoff_bound(2, 800, 0.3, 0.5) < chernoff_bound(2, 200, 0.3, 0.5)
    with pytest.raises(ValidationError):
        chernoff_check(1, 10, 0.6, 0.5, 10, seed=0)


def test_converse_bounds_behaviour():
    ens = induced_ensemble(HALF, chrysler_povm())
    lam = ens.probs
    loose = converse_bounds(lam, ens, 8, 0.05)
    tight = converse_bounds(lam, ens, 8, 0.999)
    assert loose.MN_lower <= loose.MN_lower_exact
    assert tight.MN_lower_exact < loose.MN_lower_exact
    with pytest.raises(ValidationError):
        converse_bounds(lam, ens, 8, 1.0)


@pytest.mark.parametrize("which", ["chrysler3", "factor_mode"])
def test_component_validity_matches_dense(which, request):
    res = request.getfixturevalue(which)
    for nu in range(res.params.N):
        v = res.component_validity(nu)
        assert v.valid(res.params.M)
        dense = res.component_povm(nu)
        low = min(np.linalg.eigvalsh(e).min() for e in dense.effects)
        assert low >= -1e-9
        # the fill target holds the complement plus a PSD sampled part
        assert np.linalg.eigvalsh(dense.effects[res.fill_target(nu)]).min() >= v.min_fill_eigenvalue - 1e-9
        nonzero = np.count_nonzero(np.abs(dense.effects).max(axis=(1, 2)) > 1e-12)
        assert nonzero <= v.support
