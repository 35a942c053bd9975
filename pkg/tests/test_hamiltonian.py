import numpy as np
import pytest

from dynamics import BallField, LinearField, integrate
from hamiltonian import (GreedySelection, HamiltonianError, argmin_directions, argmin_selection, hamiltonian,
                         hok_residual, sphere_sampling_infimum)
from measures import ParameterError, delta0, dirac, make_measure
from transport import Displacement

ROTATION = [[0.0, 1.0], [-1.0, 0.0]]
LINEAR = LinearField(ROTATION, -np.eye(2), k=1.0)


def _identity(nu):
    return Displacement(nu, np.array(nu.points))


def test_zero_displacement_gives_zero(cloud_factory):
    nu = cloud_factory(0, n=4)
    assert hamiltonian(BallField(1.0), nu, Displacement(nu, np.zeros((4, 2)))).value == 0.0


def test_closed_form_values():
    nu = dirac([1.0, 0.0])
    assert hamiltonian(BallField(1.0), nu, _identity(nu)).value == pytest.approx(-2.0)
    assert hamiltonian(LINEAR, nu, _identity(nu)).value == pytest.approx(-1.0)


def test_support_mismatch_is_an_error(symmetric_pair):
    other = make_measure([[1.0, 0.0], [-1.0, 0.5]])
    with pytest.raises(HamiltonianError):
        hamiltonian(BallField(1.0), symmetric_pair, _identity(other))


def test_argmin_selection_examples():
    nu = dirac([1.0, 0.0])
    np.testing.assert_array_equal(argmin_selection(BallField(1.0), [1.0, 0.0], nu, [0.0, 0.0]), [0.0, 0.0])
    np.testing.assert_allclose(argmin_selection(BallField(1.0), [1.0, 0.0], nu, [1.0, 0.0]), [-2.0, 0.0])
    np.testing.assert_allclose(argmin_selection(LINEAR, [1.0, 0.0], nu, [3.0, -7.0]), [-1.0, -1.0])


@pytest.mark.parametrize("seed", range(20))
def test_positive_homogeneity_and_realizability(seed, cloud_factory):
    nu = cloud_factory(seed, n=5, radius=3.0, uniform=False)
    gen = np.random.default_rng(seed)
    p = Displacement(nu, gen.normal(size=(5, 2)))
    lam = gen.uniform(0.0, 10.0)
    for F in (BallField(0.6), LINEAR):
        base = hamiltonian(F, nu, p).value
        assert hamiltonian(F, nu, p.scaled(lam)).value == pytest.approx(lam * base, rel=1e-12, abs=1e-12)
        centers, radii = F.images(nu.points, nu)
        chosen = argmin_directions(p.vectors, centers, radii)
        realized = float(nu.weights @ np.einsum("ij,ij->i", p.vectors, chosen))
        assert realized == pytest.approx(base, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_sphere_sampling_agrees_with_closed_form(dim, rng):
    for _ in range(5):
        x = rng.uniform(-2, 2, size=dim)
        nu = make_measure(rng.uniform(-2, 2, size=(3, dim)))
        F = BallField(0.5)
        radius = F.images(x[None, :], nu)[1][0]
        p = rng.normal(size=dim)
        p *= 0.5 / (radius * np.linalg.norm(p))
        exact = float(argmin_selection(F, x, nu, p) @ p)
        sampled = sphere_sampling_infimum(F, x, nu, p, rng)
        assert exact <= sampled + 1e-12
        assert sampled - exact <= 1e-3


def test_hok_identical_measures(cloud_factory):
    nu = cloud_factory(1, n=4)
    result = hok_residual(BallField(1.0), nu, nu, 1.0)
    assert result.residual == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("alpha, lam", [(1.0, 1.0), (0.3, 0.1), (2.0, 10.0)])
def test_hok_bound_is_attained_between_point_masses(alpha, lam):
    z = np.array([1.5, -0.5])
    result = hok_residual(BallField(alpha), delta0(2), dirac(z), lam)
    expected = 2.0 * alpha * lam * float(z @ z)
    assert result.residual == pytest.approx(expected, abs=1e-9)
    assert result.bound == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("seed", range(100))
def test_hok_linear_point_masses(seed):
    gen = np.random.default_rng(seed)
    z, w = gen.uniform(-5, 5, size=(2, 2))
    result = hok_residual(LINEAR, dirac(z), dirac(w), 1.0)
    assert result.residual <= result.bound + 1e-9


@pytest.mark.parametrize("seed", range(200))
def test_hok_random_uniform_clouds(seed):
    gen = np.random.default_rng(seed)
    n = int(gen.integers(1, 6))
    nu1 = make_measure(gen.uniform(-3, 3, size=(n, 2)))
    nu2 = make_measure(gen.uniform(-3, 3, size=(n, 2)))
    for F in (BallField(0.8), LINEAR):
        for lam in (0.1, 1.0, 10.0):
            result = hok_residual(F, nu1, nu2, lam)
            assert result.residual <= result.bound + 1e-9


def test_literal_pairing_can_exceed_the_bound():
    result = hok_residual(LINEAR, dirac([10.0, 0.0]), dirac([10.0, 1.0]), 1.0, reverse_q=False)
    assert result.residual > result.bound


def test_hok_needs_positive_lambda(symmetric_pair):
    with pytest.raises(ParameterError):
        hok_residual(BallField(1.0), symmetric_pair, symmetric_pair, 0.0)


def test_greedy_policy_falls_back_to_previous_candidate():
    calls = {"n": 0}

    def p_source(mu):
        calls["n"] += 1
        if calls["n"] % 2 == 0:
            return None, False
        return Displacement(mu, np.array(mu.points)), True

    policy = GreedySelection(p_source)
    traj = integrate(BallField(1.0), dirac([1.0, 0.0]), policy, 0.01, 0.1)
    assert len(traj.diagnostics["events"]) == 5
    assert np.all(np.diff(traj.m2_series()) < 0)


def test_greedy_policy_without_any_candidate_uses_centers():
    policy = GreedySelection(lambda mu: (None, False))
    traj = integrate(BallField(1.0), dirac([1.0, 0.0]), policy, 0.1, 0.3)
    assert np.all(traj.velocities == 0.0)
    assert len(traj.diagnostics["events"]) == 3
