import numpy as np
import pytest

from measures import delta0, dirac, make_measure, moment2
from transport import (TransportError, barycentric_projection, displacement_pq, invert_plan, optimal_assignment,
                       optimal_displacement, permutation_oracle, plan_to_dict, solve_ot, w2)


def _square_pair():
    return make_measure([[0.0, 0.0], [1.0, 0.0]]), make_measure([[0.0, 1.0], [1.0, 1.0]])


def _random_uniform_pair(seed):
    gen = np.random.default_rng(seed)
    n, d = int(gen.integers(1, 7)), int(gen.integers(1, 4))
    return (make_measure(gen.uniform(-3, 3, size=(n, d))), make_measure(gen.uniform(-3, 3, size=(n, d))))


def test_self_transport_is_free(cloud_factory):
    nu = cloud_factory(1, n=5)
    plan = solve_ot(nu, nu)
    assert plan.cost == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(plan.matrix, np.diag(nu.weights), atol=1e-15)
    assert w2(nu, nu) == pytest.approx(0.0, abs=1e-7)


def test_vertical_matching():
    nu1, nu2 = _square_pair()
    plan = solve_ot(nu1, nu2)
    assert plan.cost == pytest.approx(1.0, abs=1e-12)
    assert w2(nu1, nu2) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(plan.matrix, 0.5 * np.eye(2), atol=1e-15)


def test_transport_to_origin_costs_second_moment(cloud_factory):
    nu = cloud_factory(2, n=7, uniform=False)
    plan = solve_ot(nu, delta0(2))
    np.testing.assert_allclose(plan.matrix[:, 0], nu.weights)
    assert plan.cost == pytest.approx(moment2(nu).value ** 2, rel=1e-12)
    assert w2(nu, delta0(2)) == pytest.approx(moment2(nu).value, rel=1e-12)


def test_dimension_mismatch_is_an_error():
    with pytest.raises(TransportError):
        solve_ot(delta0(2), delta0(3))


def test_inversion():
    nu1, nu2 = _square_pair()
    plan = solve_ot(nu1, nu2)
    inverse = invert_plan(plan)
    np.testing.assert_array_equal(inverse.matrix, plan.matrix.T)
    assert inverse.cost == plan.cost == pytest.approx(1.0)
    np.testing.assert_array_equal(invert_plan(inverse).matrix, plan.matrix)


@pytest.mark.parametrize("seed", range(200))
def test_solver_matches_permutation_oracle(seed):
    nu1, nu2 = _random_uniform_pair(seed)
    assert solve_ot(nu1, nu2).cost == pytest.approx(permutation_oracle(nu1, nu2), abs=1e-9)


@pytest.mark.parametrize("seed", range(50))
def test_metric_axioms(seed):
    gen = np.random.default_rng(seed)
    n, d = int(gen.integers(1, 7)), int(gen.integers(1, 4))
    a, b, c = (make_measure(gen.uniform(-3, 3, size=(n, d))) for _ in range(3))
    assert w2(a, b) == pytest.approx(w2(b, a), abs=1e-9)
    assert w2(a, c) <= w2(a, b) + w2(b, c) + 1e-9


@pytest.mark.parametrize("seed", range(30))
def test_plan_marginals_and_cost(seed, cloud_factory):
    nu1 = cloud_factory(seed, n=4, uniform=False)
    nu2 = cloud_factory(seed + 1000, n=6, uniform=False)
    plan = solve_ot(nu1, nu2)
    np.testing.assert_allclose(plan.matrix.sum(axis=1), nu1.weights, atol=1e-10)
    np.testing.assert_allclose(plan.matrix.sum(axis=0), nu2.weights, atol=1e-10)
    costs = ((nu1.points[:, None, :] - nu2.points[None, :, :]) ** 2).sum(-1)
    assert plan.cost == pytest.approx(float((plan.matrix * costs).sum()), abs=1e-10)


@pytest.mark.parametrize("seed", range(30))
def test_barycentric_displacement_within_w2(seed, cloud_factory):
    nu1 = cloud_factory(seed, n=3, uniform=False)
    nu2 = cloud_factory(seed + 500, n=5, uniform=False)
    p, q = displacement_pq(nu1, nu2)
    assert p.l2_norm() <= w2(nu1, nu2) + 1e-9
    assert q.l2_norm() <= w2(nu1, nu2) + 1e-9


def test_displacements_between_identical_clouds_vanish(cloud_factory):
    nu = cloud_factory(4, n=4)
    p, q = displacement_pq(nu, nu)
    np.testing.assert_allclose(p.vectors, 0.0, atol=1e-15)
    np.testing.assert_allclose(q.vectors, 0.0, atol=1e-15)


def test_single_atom_displacements():
    z = np.array([2.0, -1.0])
    p, q = displacement_pq(delta0(2), dirac(z))
    np.testing.assert_allclose(p.vectors[0], -z)
    np.testing.assert_allclose(q.vectors[0], z)


def test_permutation_displacement():
    nu1 = make_measure([[0.0, 0.0], [3.0, 0.0]])
    nu2 = make_measure([[3.1, 1.0], [0.2, 1.0]])
    p, _ = displacement_pq(nu1, nu2)
    sigma = optimal_assignment(nu1, nu2)
    np.testing.assert_array_equal(sigma, [1, 0])
    np.testing.assert_allclose(p.vectors, nu1.points - nu2.points[sigma], atol=1e-15)
    assert p.is_map


def test_optimal_displacement_examples(symmetric_pair):
    p = optimal_displacement(symmetric_pair, delta0(2), 1.0)
    np.testing.assert_allclose(p.vectors, -symmetric_pair.points)
    assert p.is_map
    split = optimal_displacement(delta0(2), symmetric_pair, 1.0)
    np.testing.assert_allclose(split.vectors, 0.0, atol=1e-15)
    assert not split.is_map
    same = optimal_displacement(symmetric_pair, symmetric_pair, 2.5)
    np.testing.assert_allclose(same.vectors, 0.0, atol=1e-15)


def test_zero_weight_atoms_are_skipped():
    nu1 = make_measure([[0.0, 0.0], [5.0, 5.0]], [1.0, 0.0])
    p, _ = displacement_pq(nu1, dirac([1.0, 0.0]))
    assert p.skipped == (1,)
    np.testing.assert_array_equal(p.vectors[1], [0.0, 0.0])


def test_oracle_and_assignment_refuse_bad_shapes(symmetric_pair):
    with pytest.raises(TransportError):
        permutation_oracle(symmetric_pair, delta0(2))
    with pytest.raises(TransportError):
        optimal_assignment(make_measure([[0.0], [1.0]], [0.2, 0.8]), make_measure([[0.0], [1.0]]))


def test_plan_export(symmetric_pair):
    exported = plan_to_dict(solve_ot(symmetric_pair, delta0(2)))
    assert set(exported) == {"source", "target", "matrix", "cost", "w2", "optimal"}
    assert exported["w2"] == pytest.approx(1.0)


def test_barycentric_projection_of_a_split_plan(symmetric_pair):
    bary, skipped = barycentric_projection(solve_ot(delta0(2), symmetric_pair))
    np.testing.assert_allclose(bary, [[0.0, 0.0]], atol=1e-15)
    assert skipped == ()
