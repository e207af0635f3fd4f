import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sropinf.errors import DimensionError
from sropinf.spectral_field import (
    Field,
    Grid,
    derivative,
    inner_product,
    norm,
    quad_product,
    read_snapshot_csv,
    shift,
    write_snapshot_csv,
)

from conftest import random_field


def modes(grid, *terms):
    return Field.from_modes(grid, terms)


class TestGrid:
    def test_defaults(self):
        g = Grid()
        assert g.L == pytest.approx(2 * np.pi)
        assert (g.n_modes, g.n_grid) == (20, 40)

    @pytest.mark.parametrize("kw", [dict(L=0.0), dict(L=-1.0), dict(n_modes=0), dict(n_grid=39)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            Grid(**kw)

    def test_padding_is_alias_free(self):
        g = Grid(n_modes=7, n_grid=14)
        assert g.n_pad >= 3 * g.n_modes - 2


class TestField:
    def test_round_trip_grid(self, grid, rng):
        v = random_field(rng, grid)
        back = Field.from_grid(grid, v.values())
        assert np.allclose(back.coeffs, v.coeffs, rtol=0, atol=1e-12 * np.abs(v.coeffs).max())

    def test_mean_coefficient_is_real(self, grid):
        c = np.zeros(grid.n_modes, complex)
        c[0] = 1 + 2j
        assert Field(grid, c).coeffs[0] == 1.0

    def test_from_modes_values(self, grid):
        v = modes(grid, (0, "cos", 1.5), (2, "sin", -0.5), (3, "cos", 2.0))
        x = grid.x()
        assert np.allclose(v.values(), 1.5 - 0.5 * np.sin(2 * x) + 2 * np.cos(3 * x), atol=1e-13)

    def test_from_function(self, grid):
        v = Field.from_function(grid, lambda x: np.exp(np.sin(x)) - np.cos(5 * x))
        x = grid.x(200)
        assert np.allclose(v.values(200), np.exp(np.sin(x)) - np.cos(5 * x), atol=1e-10)

    def test_wrong_shape(self, grid):
        with pytest.raises(DimensionError):
            Field(grid, np.zeros(grid.n_modes + 1))

    def test_out_of_range_mode(self, grid):
        with pytest.raises(DimensionError):
            modes(grid, (grid.n_modes, "cos", 1.0))

    def test_immutable(self, grid):
        v = Field.zeros(grid)
        with pytest.raises(AttributeError):
            v.coeffs = None
        with pytest.raises(ValueError):
            v.coeffs[0] = 1.0

    def test_arithmetic(self, grid, rng):
        v, w = random_field(rng, grid), random_field(rng, grid)
        assert np.allclose((2 * v - w).coeffs, 2 * v.coeffs - w.coeffs)
        assert np.allclose((v + 3.0).values(), v.values() + 3.0)
        assert np.allclose((v / 4).coeffs, v.coeffs / 4)

    def test_batch_indexing(self, grid, rng):
        b = random_field(rng, grid, batch=(5,))
        assert len(b) == 5
        assert np.array_equal(b[2].coeffs, b.coeffs[2])
        assert len(list(b)) == 5


class TestInnerProduct:
    def test_cos_cos(self, grid):
        c = modes(grid, (1, "cos", 1.0))
        assert inner_product(c, c) == pytest.approx(0.5, abs=1e-15)

    def test_sin_cos(self, grid):
        assert inner_product(modes(grid, (1, "sin", 1.0)), modes(grid, (1, "cos", 1.0))) == pytest.approx(0, abs=1e-15)

    def test_mean_extraction(self, grid):
        v = modes(grid, (0, "cos", 1.0), (2, "cos", 1.0))
        assert inner_product(v, modes(grid, (0, "cos", 1.0))) == pytest.approx(1.0, abs=1e-15)

    def test_matches_quadrature(self, grid, rng):
        v, w = random_field(rng, grid), random_field(rng, grid)
        quad = np.mean(v.values(128) * w.values(128))
        assert inner_product(v, w) == pytest.approx(quad, rel=1e-12)

    def test_mismatched_grids(self, grid):
        other = Grid(L=3.0)
        with pytest.raises(DimensionError):
            inner_product(Field.zeros(grid), Field.zeros(other))

    def test_norm_zero_iff_zero(self, grid, rng):
        assert norm(Field.zeros(grid)) == 0.0
        assert norm(random_field(rng, grid)) > 0

    def test_batched(self, grid, rng):
        b = random_field(rng, grid, batch=(3, 4))
        w = random_field(rng, grid)
        ip = inner_product(b, w)
        assert ip.shape == (3, 4)
        assert ip[1, 2] == pytest.approx(inner_product(b[1][2], w))


class TestShift:
    def test_identity(self, grid, rng):
        v = random_field(rng, grid)
        assert shift(v, 0.0).allclose(v, atol=0)

    def test_group_property(self, grid, rng):
        v = random_field(rng, grid)
        assert shift(shift(v, 0.7), -2.1).allclose(shift(v, -1.4), atol=1e-12)

    def test_cos_to_sin(self, grid):
        assert shift(modes(grid, (1, "cos", 1.0)), np.pi / 2).allclose(modes(grid, (1, "sin", 1.0)), atol=1e-15)

    def test_matches_translation(self, grid, rng):
        v = random_field(rng, grid)
        theta = 0.3
        # v(x - theta) evaluated by direct Fourier sum
        xs = grid.x()
        direct = np.real(
            v.coeffs[0] + 2 * np.sum(v.coeffs[1:, None] * np.exp(1j * np.outer(grid.wavenumbers[1:], xs - theta)), axis=0)
        )
        assert np.allclose(shift(v, theta).values(), direct, atol=1e-12)

    def test_periodic_wrap(self, grid, rng):
        v = random_field(rng, grid)
        assert shift(v, grid.L).allclose(v, atol=1e-12)

    def test_broadcast_theta(self, grid, rng):
        b = random_field(rng, grid, batch=(4,))
        th = np.linspace(0, 1, 4)
        s = shift(b, th)
        for i in range(4):
            assert s[i].allclose(shift(b[i], th[i]), atol=1e-15)


class TestDerivative:
    def test_cos(self, grid):
        assert derivative(modes(grid, (1, "cos", 1.0)), 1).allclose(modes(grid, (1, "sin", -1.0)), atol=1e-15)

    def test_second(self, grid):
        assert derivative(modes(grid, (2, "cos", 1.0)), 2).allclose(modes(grid, (2, "cos", -4.0)), atol=1e-14)

    def test_constant(self, grid):
        assert norm(derivative(modes(grid, (0, "cos", 3.0)), 1)) == 0.0

    def test_fourth(self, grid):
        assert derivative(modes(grid, (3, "sin", 1.0)), 4).allclose(modes(grid, (3, "sin", 81.0)), atol=1e-12)

    def test_scaled_domain(self):
        g = Grid(L=4.0, n_modes=5, n_grid=10)
        v = Field.from_function(g, lambda x: np.sin(2 * np.pi * x / 4.0))
        dv = derivative(v, 1).values()
        assert np.allclose(dv, (2 * np.pi / 4.0) * np.cos(2 * np.pi * g.x() / 4.0), atol=1e-12)

    def test_bad_order(self, grid):
        with pytest.raises(ValueError):
            derivative(Field.zeros(grid), -1)


class TestQuadProduct:
    def test_product_to_sum(self, grid):
        c = modes(grid, (1, "cos", 1.0))
        assert quad_product(c, c).allclose(modes(grid, (0, "cos", 0.5), (2, "cos", 0.5)), atol=1e-15)

    def test_zero(self, grid, rng):
        assert norm(quad_product(random_field(rng, grid), Field.zeros(grid))) == 0.0

    def test_no_aliasing_top_mode(self, grid):
        c = modes(grid, (19, "cos", 1.0))
        assert quad_product(c, c).allclose(modes(grid, (0, "cos", 0.5)), atol=1e-14)

    def test_exact_on_retained_modes(self, grid, rng):
        v, w = random_field(rng, grid), random_field(rng, grid)
        # oracle: direct convolution of the two-sided spectra
        K = grid.n_modes
        full = lambda c: np.concatenate([np.conj(c[:0:-1]), c])  # k = -(K-1) .. K-1
        conv = np.convolve(full(v.coeffs), full(w.coeffs))  # k = -2(K-1) .. 2(K-1)
        expect = conv[2 * (K - 1): 2 * (K - 1) + K]
        assert np.allclose(quad_product(v, w).coeffs, expect, atol=1e-13)

    def test_symmetric(self, grid, rng):
        v, w = random_field(rng, grid), random_field(rng, grid)
        assert quad_product(v, w).allclose(quad_product(w, v), atol=1e-15)


class TestInvariants:
    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), theta=st.floats(-20, 20))
    def test_shift_preserves_inner_product(self, seed, theta):
        g = Grid()
        rng = np.random.default_rng(seed)
        v, w = random_field(rng, g), random_field(rng, g)
        assert inner_product(shift(v, theta), shift(w, theta)) == pytest.approx(inner_product(v, w), abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), theta=st.floats(-20, 20))
    def test_derivative_commutes_with_shift(self, seed, theta):
        g = Grid()
        v = random_field(np.random.default_rng(seed), g)
        assert derivative(shift(v, theta), 1).allclose(shift(derivative(v, 1), theta), atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_derivative_orthogonal(self, seed):
        g = Grid()
        v = random_field(np.random.default_rng(seed), g)
        assert abs(inner_product(derivative(v, 1), v)) <= 1e-12


class TestCsv:
    def test_round_trip(self, grid, rng, tmp_path):
        b = random_field(rng, grid, batch=(6,))
        p = write_snapshot_csv(tmp_path / "s.csv", b)
        header = p.read_text().splitlines()[0].split(",")
        assert len(header) == grid.n_grid and float(header[1]) == pytest.approx(grid.L / grid.n_grid)
        back = read_snapshot_csv(p, grid)
        assert np.allclose(back.coeffs, b.coeffs, atol=1e-14)

    def test_missing(self, grid, tmp_path):
        with pytest.raises(FileNotFoundError, match="nope.csv"):
            read_snapshot_csv(tmp_path / "nope.csv", grid)
