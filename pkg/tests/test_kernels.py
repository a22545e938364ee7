import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcabem.kernels import INV_4PI, KernelSpec, eval, eval_batch

coords = st.floats(-3.0, 3.0, allow_nan=False)
points = st.tuples(coords, coords, coords).map(np.array)


def test_laplace_slp_at_unit_distance():
    spec = KernelSpec("laplace", "single")
    val = eval(spec, np.array([1.0, 0, 0]), np.array([0.0, 0, 0]))
    assert val == pytest.approx(1.0 / (4 * np.pi))
    assert val.real == pytest.approx(0.0795774715, abs=1e-9)


def test_laplace_dlp_orthogonal_is_zero():
    spec = KernelSpec("laplace", "double")
    val = eval(spec, np.array([1.0, 0, 0]), np.array([0.0, 0, 0]),
               n_y=np.array([0.0, 1.0, 0.0]))
    assert val == 0.0


def test_helmholtz_slp_kappa_zero():
    spec = KernelSpec("helmholtz", "single", kappa=0.0)
    val = eval(spec, np.array([2.0, 0, 0]), np.array([0.0, 0, 0]))
    assert val == pytest.approx(0.5)
    assert val.imag == 0.0


def test_helmholtz_dlp_formula():
    spec = KernelSpec("helmholtz", "double", kappa=3.0)
    x = np.array([0.3, -0.2, 1.4])
    y = np.array([-0.5, 0.8, 0.1])
    n = np.array([1.0, 2.0, -1.0])
    n = n / np.linalg.norm(n)
    r = np.linalg.norm(x - y)
    expected = np.exp(1j * 3 * r) * (1 - 1j * 3 * r) * np.dot(x - y, n) / r ** 3
    assert eval(spec, x, y, n) == pytest.approx(expected)


def test_coincident_points_raise():
    spec = KernelSpec("laplace", "single")
    with pytest.raises(ValueError):
        eval(spec, np.ones(3), np.ones(3))


def test_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec("poisson", "single")
    with pytest.raises(ValueError):
        KernelSpec("laplace", "triple")
    with pytest.raises(ValueError):
        KernelSpec("helmholtz", "single", kappa=-1.0)


@settings(deadline=None, max_examples=50)
@given(x=points, y=points)
def test_slp_symmetry_exact(x, y):
    if np.array_equal(x, y):
        return
    for spec in (KernelSpec("laplace", "single"),
                 KernelSpec("helmholtz", "single", 3.0)):
        assert eval(spec, x, y) == eval(spec, y, x)


@settings(deadline=None, max_examples=50)
@given(x=points, y=points)
def test_helmholtz_slp_modulus(x, y):
    if np.array_equal(x, y):
        return
    spec = KernelSpec("helmholtz", "single", 3.0)
    r = np.linalg.norm(x - y)
    assert abs(eval(spec, x, y)) == pytest.approx(1.0 / r, rel=1e-13)


def _fd_laplacian(f, x, h=1e-3):
    total = 0.0
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        total += f(x + e) - 2.0 * f(x) + f(x - e)
    return total / h ** 2


def test_laplace_slp_harmonic():
    spec = KernelSpec("laplace", "single")
    y = np.zeros(3)
    x = np.array([0.6, 0.5, 0.63])  # r close to 1

    def f(p):
        return eval(spec, p, y).real

    assert abs(_fd_laplacian(f, x)) <= 1e-5


def test_helmholtz_slp_satisfies_equation():
    kappa = 3.0
    spec = KernelSpec("helmholtz", "single", kappa)
    y = np.zeros(3)
    x = np.array([0.6, 0.5, 0.63])
    g = eval(spec, x, y)

    for part in (lambda p: eval(spec, p, y).real,
                 lambda p: eval(spec, p, y).imag):
        val = _fd_laplacian(part, x)
        ref = -kappa ** 2 * part(x)
        assert abs(val - ref) <= 1e-4 * abs(g)


@pytest.mark.parametrize("equation,layer,kappa", [
    ("laplace", "single", 0.0), ("laplace", "double", 0.0),
    ("helmholtz", "single", 3.0), ("helmholtz", "double", 3.0)])
def test_batch_matches_scalar_bitwise(equation, layer, kappa, rng):
    spec = KernelSpec(equation, layer, kappa)
    xs = rng.standard_normal((1000, 3)) + np.array([4.0, 0, 0])
    ys = rng.standard_normal((1000, 3))
    normals = rng.standard_normal((1000, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    batch = eval_batch(spec, xs, ys, normals if spec.needs_normal else None)
    for k in range(0, 1000, 37):
        one = eval(spec, xs[k], ys[k],
                   normals[k] if spec.needs_normal else None)
        assert complex(batch[k]) == one  # max abs difference of exactly zero


def test_batch_of_one_and_empty(rng):
    spec = KernelSpec("helmholtz", "single", 2.0)
    xs = rng.standard_normal((1, 3)) + 5.0
    ys = rng.standard_normal((1, 3))
    assert complex(eval_batch(spec, xs, ys)[0]) == eval(spec, xs[0], ys[0])
    empty = eval_batch(spec, np.empty((0, 3)), np.empty((0, 3)))
    assert empty.shape == (0,)


def test_batch_shape_mismatch(rng):
    spec = KernelSpec("laplace", "single")
    with pytest.raises(ValueError):
        eval_batch(spec, np.zeros((3, 3)), np.zeros((4, 3)))
    with pytest.raises(ValueError):
        eval_batch(KernelSpec("laplace", "double"), np.zeros((3, 3)),
                   np.ones((3, 3)), np.zeros((4, 3)))


def test_double_layer_requires_normal():
    spec = KernelSpec("laplace", "double")
    with pytest.raises(ValueError):
        eval(spec, np.ones(3), np.zeros(3))
    with pytest.raises(ValueError):
        eval_batch(spec, np.ones((2, 3)), np.zeros((2, 3)))
