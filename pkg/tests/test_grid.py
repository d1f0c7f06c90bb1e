import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from monomfg.errors import ConfigurationError, GridMismatchError, NonFiniteError
from monomfg.grid import (Field, MatrixField, VectorField, divergence, gradient, hessian, inner, integrate,
                          laplacian_power, make_grid, periodic_convolve, profile_field, random_fourier_field,
                          random_positive_field, read_field_csv, spectral_inner, wrapped_gaussian_kernel,
                          write_field_csv)

TWO_PI = 2 * np.pi


def sample(grid, func):
    return Field.from_function(grid, func)


class TestMakeGrid:
    def test_nodes(self):
        g = make_grid(1, 8)
        np.testing.assert_array_equal(g.axis_coordinates, np.arange(8) / 8)
        assert g.spacing == 1 / 8

    def test_two_dimensional_size(self):
        g = make_grid(2, 16)
        assert g.size == 256
        assert g.shape == (16, 16)

    @pytest.mark.parametrize("d,N", [(3, 8), (0, 8), (1, 12), (1, 4), (2, 7)])
    def test_rejects(self, d, N):
        with pytest.raises(ConfigurationError):
            make_grid(d, N)

    def test_frequency_lattice(self):
        g = make_grid(1, 8)
        assert sorted(g.frequencies[0].ravel()) == [-4, -3, -2, -1, 0, 1, 2, 3]


class TestField:
    def test_rejects_nonfinite(self, grid64):
        vals = np.zeros(64)
        vals[5] = np.nan
        with pytest.raises(NonFiniteError):
            Field(grid64, vals)

    def test_rejects_wrong_length(self, grid64):
        with pytest.raises(ConfigurationError):
            Field(grid64, np.zeros(10))

    def test_values_read_only(self, grid64):
        f = Field.constant(grid64, 1.0)
        with pytest.raises(ValueError):
            f.values[0] = 2.0

    def test_grid_mismatch(self, grid64):
        with pytest.raises(GridMismatchError):
            Field.constant(grid64, 1.0) + Field.constant(make_grid(1, 32), 1.0)

    def test_linear_ops_keep_coefficients(self, grid64, rng):
        f = random_fourier_field(grid64, rng)
        g = random_fourier_field(grid64, rng)
        h = 2.0 * f - g + 1.0
        assert h.has_coefficients
        np.testing.assert_allclose(h.values, 2 * f.values - g.values + 1, atol=1e-13)


class TestGradient:
    def test_sine(self, grid64):
        f = sample(grid64, lambda x: np.sin(TWO_PI * x))
        exact = TWO_PI * np.cos(TWO_PI * grid64.mesh[0])
        assert np.abs(gradient(f)[0].values - exact).max() <= 1e-10

    def test_constant(self, grid64):
        assert gradient(Field.constant(grid64, 3.0))[0].sup_norm() == 0.0

    def test_two_modes(self, grid64):
        f = sample(grid64, lambda x: np.sin(TWO_PI * x) + np.cos(2 * TWO_PI * x))
        x = grid64.mesh[0]
        exact = TWO_PI * np.cos(TWO_PI * x) - 2 * TWO_PI * np.sin(2 * TWO_PI * x)
        assert np.abs(gradient(f)[0].values - exact).max() <= 1e-10

    def test_nyquist_zeroed(self):
        g = make_grid(1, 8)
        f = Field(g, (-1.0) ** np.arange(8))
        assert gradient(f)[0].sup_norm() == 0.0
        # even order keeps it
        np.testing.assert_allclose(laplacian_power(f, 1).values, -(TWO_PI * 4) ** 2 * f.values)


class TestHessian:
    def test_cosine(self, grid64):
        f = sample(grid64, lambda x: np.cos(TWO_PI * x))
        exact = -TWO_PI**2 * np.cos(TWO_PI * grid64.mesh[0])
        assert np.abs(hessian(f)[0, 0].values - exact).max() <= 1e-9

    def test_constant(self, grid2d):
        H = hessian(Field.constant(grid2d, 2.0))
        assert all(H[i, j].sup_norm() == 0 for i in range(2) for j in range(2))

    def test_mixed_partial(self, grid2d):
        f = sample(grid2d, lambda x, y: np.sin(TWO_PI * x) * np.sin(TWO_PI * y))
        X, Y = grid2d.mesh
        exact = TWO_PI**2 * np.cos(TWO_PI * X) * np.cos(TWO_PI * Y)
        H = hessian(f)
        assert np.abs(H[0, 1].values - exact).max() <= 1e-9
        assert H[0, 1] is H[1, 0]


class TestDivergence:
    def test_of_gradient(self, grid64):
        f = sample(grid64, lambda x: np.sin(TWO_PI * x))
        exact = -TWO_PI**2 * f.values
        assert np.abs(divergence(gradient(f)).values - exact).max() <= 1e-9

    def test_constant(self, grid2d):
        V = VectorField([Field.constant(grid2d, 1.0), Field.constant(grid2d, -2.0)])
        assert divergence(V).sup_norm() == 0.0

    def test_rotational(self, grid2d):
        V = VectorField([sample(grid2d, lambda x, y: np.sin(TWO_PI * y)),
                         sample(grid2d, lambda x, y: np.sin(TWO_PI * x))])
        assert divergence(V).sup_norm() <= 1e-12


class TestLaplacianPower:
    def test_first(self, grid64):
        f = sample(grid64, lambda x: np.sin(TWO_PI * x))
        assert np.abs(laplacian_power(f, 1).values + TWO_PI**2 * f.values).max() <= 1e-10

    @pytest.mark.parametrize("r", [1, 2, 6, 8])
    def test_constant(self, grid64, r):
        assert laplacian_power(Field.constant(grid64, 5.0), r).sup_norm() == 0.0

    def test_sixth_power(self, grid64):
        f = sample(grid64, lambda x: np.sin(TWO_PI * x))
        out = laplacian_power(f, 6).values
        scale = (4 * np.pi**2) ** 6
        assert np.abs(out / scale - f.values).max() <= 1e-12

    def test_bad_order(self, grid64):
        with pytest.raises(ConfigurationError):
            laplacian_power(Field.constant(grid64, 1.0), 0)


class TestIntegrate:
    def test_one(self, grid64):
        assert integrate(Field.constant(grid64, 1.0)) == 1.0

    def test_zero_mean_mode(self, grid64):
        assert abs(integrate(sample(grid64, lambda x: np.sin(TWO_PI * x)))) <= 1e-15

    def test_cosine_offset(self, grid64):
        f = sample(grid64, lambda x: 2 + np.cos(2 * TWO_PI * x))
        assert abs(integrate(f) - 2.0) <= 1e-14


class TestConvolution:
    def test_mean_preserved(self, grid64):
        k = wrapped_gaussian_kernel(grid64, 0.07)
        out = periodic_convolve(Field.constant(grid64, 1.0), k)
        assert np.abs(out.values - 1).max() <= 1e-13

    def test_delta_identity(self, grid64, rng):
        vals = np.zeros(64)
        vals[0] = 64.0
        delta = Field(grid64, vals)
        f = random_fourier_field(grid64, rng)
        assert np.abs(periodic_convolve(f, delta).values - f.values).max() <= 1e-12

    @pytest.mark.parametrize("w", [0.03, 0.1, 0.2])
    def test_gaussian_multiplier(self, grid64, w):
        f = sample(grid64, lambda x: np.sin(TWO_PI * x))
        out = periodic_convolve(f, wrapped_gaussian_kernel(grid64, w))
        exact = np.exp(-2 * np.pi**2 * w**2) * f.values
        assert np.abs(out.values - exact).max() <= 1e-12

    def test_grid_mismatch(self, grid64):
        with pytest.raises(GridMismatchError):
            periodic_convolve(Field.constant(grid64, 1.0), wrapped_gaussian_kernel(make_grid(1, 32), 0.1))


class TestKernel:
    @pytest.mark.parametrize("w", [0.01, 0.1, 0.5, 3.0])
    def test_unit_integral(self, grid64, w):
        k = wrapped_gaussian_kernel(grid64, w)
        assert abs(integrate(k) - 1) <= 1e-12
        assert k.min() >= 0

    def test_flat_limit(self, grid64):
        k = wrapped_gaussian_kernel(grid64, 5.0)
        assert np.abs(k.values - 1).max() <= 1e-10

    def test_positive(self, grid64):
        assert wrapped_gaussian_kernel(grid64, 0.1).min() > 0

    def test_two_dimensional(self, grid2d):
        k = wrapped_gaussian_kernel(grid2d, 0.1)
        assert abs(integrate(k) - 1) <= 1e-12

    @pytest.mark.parametrize("w", [0.0, -1.0])
    def test_bad_width(self, grid64, w):
        with pytest.raises(ConfigurationError):
            wrapped_gaussian_kernel(grid64, w)


def _rel(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-300)


class TestProperties:
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), d=st.sampled_from([1, 2]))
    def test_div_grad_is_laplacian(self, seed, d):
        g = make_grid(d, 32 if d == 1 else 16)
        f = random_fourier_field(g, np.random.default_rng(seed), modes=5)
        assert _rel(divergence(gradient(f)).values, laplacian_power(f, 1).values) <= 1e-10

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), r=st.integers(1, 8))
    def test_derivatives_have_zero_mean(self, seed, r):
        g = make_grid(2, 16)
        f = random_positive_field(g, np.random.default_rng(seed))
        for comp in gradient(f):
            assert integrate(comp) == 0.0
        assert integrate(laplacian_power(f, r)) == 0.0

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3))
    def test_convolution_linear_and_positive(self, seed, a, b):
        g = make_grid(1, 64)
        r = np.random.default_rng(seed)
        k = wrapped_gaussian_kernel(g, 0.05)
        f1, f2 = random_fourier_field(g, r), random_fourier_field(g, r)
        lhs = periodic_convolve(a * f1 + b * f2, k).values
        rhs = a * periodic_convolve(f1, k).values + b * periodic_convolve(f2, k).values
        assert np.abs(lhs - rhs).max() <= 1e-12 * (1 + np.abs(rhs).max())
        pos = random_positive_field(g, r, floor=0.0)
        assert periodic_convolve(pos, k).min() >= -1e-15

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_parseval(self, seed):
        g = make_grid(2, 16)
        r = np.random.default_rng(seed)
        f, h = random_fourier_field(g, r), random_fourier_field(g, r)
        a, b = inner(f, h), spectral_inner(f, h)
        assert abs(a - b) <= 1e-10 * max(abs(b), np.sqrt(inner(f, f) * inner(h, h)))


class TestCsv:
    @pytest.mark.parametrize("d,N", [(1, 64), (2, 16)])
    def test_roundtrip_bit_exact(self, tmp_path, rng, d, N):
        g = make_grid(d, N)
        f = Field(g, rng.standard_normal(g.size) * 10.0 ** rng.integers(-300, 300, g.size))
        path = tmp_path / "f.csv"
        write_field_csv(path, f)
        back = read_field_csv(path)
        assert back.grid == g
        assert np.array_equal(back.values, f.values)

    def test_header_and_order(self, tmp_path):
        g = make_grid(2, 8)
        f = profile_field(g, "cosine-sum", 1.0)
        path = tmp_path / "f.csv"
        write_field_csv(path, f)
        lines = path.read_text().splitlines()
        assert lines[0] == "# d=2 N=8"
        assert len(lines) == 65
        assert lines[2].split(",")[:2] == ["0.0", "0.125"]

    def test_wrong_grid(self, tmp_path):
        path = tmp_path / "f.csv"
        write_field_csv(path, Field.constant(make_grid(1, 8), 1.0))
        with pytest.raises(GridMismatchError):
            read_field_csv(path, make_grid(1, 16))

    def test_missing_header(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("0.0,1.0\n")
        with pytest.raises(ConfigurationError):
            read_field_csv(path)


class TestContainers:
    def test_matrix_symmetric_from_array(self, grid2d):
        arr = np.zeros((2, 2) + grid2d.shape)
        arr[0, 1] = 1.0
        with pytest.raises(ConfigurationError):
            MatrixField.from_array(grid2d, arr)
        arr[1, 0] = 1.0
        M = MatrixField.from_array(grid2d, arr)
        assert M[1, 0].max() == 1.0

    def test_vector_component_count(self, grid2d):
        with pytest.raises(ConfigurationError):
            VectorField([Field.constant(grid2d, 1.0)])
