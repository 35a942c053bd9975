import numpy as np
import pytest

from measures import (MeasureError, ParameterError, delta0, dirac, make_measure, mean, moment2, moment2eps,
                      push_forward)


def test_point_mass_at_origin():
    nu = make_measure([[0.0, 0.0]], [1.0])
    assert nu.size == 1 and nu.dim == 2
    assert moment2(nu).value == 0.0


def test_weights_are_renormalized():
    nu = make_measure([[1.0, 0.0], [-1.0, 0.0]], [2.0, 2.0])
    np.testing.assert_array_equal(nu.weights, [0.5, 0.5])


@pytest.mark.parametrize("points, weights, message", [
    ([[1.0, 0.0]], [0.0], "zero total mass"),
    ([[1.0, 0.0], [0.0, 1.0]], [1.0, -0.5], "negative weight"),
    ([[np.inf, 0.0]], [1.0], "non-finite"),
    (np.empty((0, 2)), None, "empty support"),
    ([[1.0, 0.0]], [0.5, 0.5], "mismatch"),
])
def test_invalid_inputs_are_rejected(points, weights, message):
    with pytest.raises(MeasureError, match=message):
        make_measure(points, weights)


def test_arrays_are_read_only(symmetric_pair):
    with pytest.raises(ValueError):
        symmetric_pair.points[0, 0] = 3.0


def test_second_moment_examples(symmetric_pair):
    assert moment2(symmetric_pair).value == pytest.approx(1.0, abs=1e-15)
    assert moment2(make_measure([[0.0, 0.0], [2.0, 0.0]])).value == pytest.approx(np.sqrt(2.0), rel=1e-15)


def test_higher_moment_examples(symmetric_pair):
    assert moment2eps(delta0(2), 1.0).value == 0.0
    assert moment2eps(symmetric_pair, 1.0).value == pytest.approx(1.0, rel=1e-15)
    assert moment2eps(dirac([2.0, 0.0]), 2.0).value == pytest.approx(2.0, rel=1e-15)
    with pytest.raises(ParameterError):
        moment2eps(symmetric_pair, 0.0)


@pytest.mark.parametrize("seed", range(10))
def test_higher_moment_decreases_to_second_moment(seed, cloud_factory):
    nu = cloud_factory(seed, n=1 + seed, radius=10.0)
    m2 = moment2(nu).value
    values = [moment2eps(nu, eps).value for eps in (1e-1, 1e-3, 1e-6)]
    assert values[0] >= values[1] - 1e-12 >= values[2] - 2e-12
    assert values[2] >= m2 - 1e-12
    assert values[2] - m2 <= 1e-6 * m2


def test_push_forward_examples(symmetric_pair):
    np.testing.assert_array_equal(push_forward(symmetric_pair, lambda x: x).points, symmetric_pair.points)
    shrunk = push_forward(symmetric_pair, lambda x: np.exp(-1.0) * x)
    assert moment2(shrunk).value == pytest.approx(np.exp(-1.0), rel=1e-15)
    collapsed = push_forward(symmetric_pair, lambda x: np.zeros(2))
    assert collapsed.size == 2
    assert moment2(collapsed).value == 0.0


def test_push_forward_rejects_non_finite_images(symmetric_pair):
    with pytest.raises(MeasureError):
        push_forward(symmetric_pair, lambda x: x / 0.0 if x[0] > 0 else x)


@pytest.mark.parametrize("seed", range(10))
def test_second_moment_is_homogeneous(seed, cloud_factory):
    nu = cloud_factory(seed, n=5, dim=3, radius=5.0, uniform=False)
    c = np.random.default_rng(seed).uniform(0.0, 3.0)
    scaled = push_forward(nu, lambda x: c * x)
    assert moment2(scaled).value == pytest.approx(c * moment2(nu).value, rel=1e-12, abs=1e-300)


def test_reconstruction_is_idempotent(cloud_factory):
    nu = cloud_factory(3, n=6, uniform=False)
    again = make_measure(nu.points, nu.weights)
    np.testing.assert_array_equal(again.points, nu.points)
    np.testing.assert_allclose(again.weights, nu.weights, rtol=1e-15, atol=0)


def test_duplicate_atoms_stay_separate():
    nu = make_measure([[1.0, 1.0], [1.0, 1.0]], [0.25, 0.75])
    assert nu.size == 2
    np.testing.assert_allclose(mean(nu), [1.0, 1.0])


def test_flat_input_is_one_dimensional():
    nu = make_measure([0.0, 2.0])
    assert nu.points.shape == (2, 1)
