import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from qmd.extremal import (
    ConvexDecomposition,
    chrysler_benchmark,
    chrysler_components,
    chrysler_constants,
    cone_membership,
    delta_rate,
    extremal_decompose,
    is_extremal,
)
from qmd.infomeasures import shannon_entropy
from qmd.numerics import haar_unitary
from qmd.quantum import Povm, chrysler_povm, computational_pvm, projector, random_density, random_povm

seeds = st.integers(0, 2**32 - 1)


def test_pvm_is_extremal(rng):
    assert is_extremal(computational_pvm(3)).extremal
    u = haar_unitary(3, rng)
    rotated = Povm(np.array([u @ e @ u.conj().T for e in computational_pvm(3).effects]))
    assert is_extremal(rotated)


def test_chrysler_not_extremal():
    rep = is_extremal(chrysler_povm())
    assert not rep.extremal and rep.null_dim == 2
    w = rep.witness
    assert np.abs(w.sum(axis=0)).max() < 1e-10
    assert np.abs(w).max() > 1e-6


def test_many_rank_one_effects_not_extremal(rng):
    # more than d^2 rank-one effects can never be linearly independent
    assert not is_extremal(random_povm(2, 5, rng, rank=1)).extremal


def test_trivial_povm_extremal():
    assert is_extremal(Povm(np.eye(2, dtype=complex)[None]))


def test_chrysler_constants():
    alpha, beta, delta = chrysler_constants()
    assert abs(alpha - (1 - 1 / math.tan(2 * math.pi / 5) ** 2)) < 1e-15
    assert abs(alpha - 0.894427) < 1e-6 and abs(beta - 0.552786) < 1e-6
    assert abs(delta - 1.544731538732779) < 1e-12


def test_chrysler_components():
    comps = chrysler_components()
    mix = ConvexDecomposition(np.full(5, 0.2), comps)
    assert mix.reconstruction_error(chrysler_povm()) < 1e-12
    assert all(is_extremal(c) for c in comps)


def test_chrysler_benchmark():
    rep = chrysler_benchmark()
    assert rep.all_extremal and rep.reconstruction_error < 1e-12
    assert np.ptp(rep.component_rates) < 1e-12
    assert abs(rep.delta_rate - rep.delta) < 1e-12
    assert rep.walk_components <= 3
    assert rep.walk_rate <= shannon_entropy(np.full(5, 0.2)) + 1e-12
    assert set(rep.to_json()) >= {"alpha", "beta", "delta", "weights"}


@given(seeds, st.integers(2, 3), st.integers(2, 6))
def test_decomposition_properties(seed, d, m):
    rng = np.random.default_rng(seed)
    a = random_povm(d, m, rng)
    nd = is_extremal(a).null_dim
    dec = extremal_decompose(a)
    assert dec.reconstruction_error(a) < 1e-9
    assert len(dec) <= 1 + nd
    assert abs(dec.weights.sum() - 1) < 1e-12 and dec.weights.min() > 0
    for c in dec.components:
        assert is_extremal(c)
        assert np.linalg.eigvalsh(c.effects).min() > -1e-9
        assert np.abs(c.total() - np.eye(d)).max() < 1e-9


def test_two_pvm_round_trip(rng):
    u = haar_unitary(2, rng)
    p1 = computational_pvm(2).effects
    p2 = np.array([u @ e @ u.conj().T for e in p1])
    # outcomes 0,1 from the first PVM, 2,3 from the second
    eff = np.concatenate([p1, p2]) / 2
    dec = extremal_decompose(Povm(eff))
    assert len(dec) == 2
    assert np.abs(np.sort(dec.weights) - 0.5).max() < 1e-9
    assert dec.reconstruction_error(Povm(eff)) < 1e-9


def test_extremal_input_returns_itself():
    a = computational_pvm(2)
    dec = extremal_decompose(a)
    assert len(dec) == 1 and dec.reconstruction_error(a) < 1e-15


def test_delta_rate(rng):
    rho = random_density(2, rng)
    a = random_povm(2, 4, rng)
    lam = np.einsum("ab,jba->j", rho, a.effects).real
    single = ConvexDecomposition(np.ones(1), [a])
    assert abs(delta_rate(rho, single) - shannon_entropy(lam)) < 1e-12
    assert delta_rate(rho, extremal_decompose(a)) <= shannon_entropy(lam) + 1e-9


def test_cone_membership():
    states = np.array([projector(np.array([1.0, 0])), projector(np.array([0, 1.0]))])
    inside = cone_membership(states, [0.3, 0.5])
    assert inside.member and inside.residual < 1e-8
    assert np.linalg.eigvalsh(inside.operator).min() > -1e-12
    plus = projector(np.array([1.0, 1.0]) / math.sqrt(2))
    # <0|A|0> = <1|A|1> = 0 forces A = 0, so Tr(plus A) = 1 is out of reach
    outside = cone_membership(np.concatenate([states, plus[None]]), [0.0, 0.0, 1.0], max_iter=500)
    assert not outside.member
