import itertools

import numpy as np
import pytest

from sropinf.errors import DimensionError, RankError
from sropinf.pod import (
    ReducedBasis,
    compute_pod,
    mean_field,
    project,
    read_basis_csv,
    reconstruct,
    write_basis_csv,
)
from sropinf.spectral_field import Field, inner_product, norm, stack

from conftest import random_field


def modes(grid, *terms):
    return Field.from_modes(grid, terms)


def gram(fields):
    return np.array([[inner_product(a, b) for b in fields] for a in fields])


def residual_energy(x, basis_rows, grid):
    """Total squared distance of the rows of x to span(basis_rows) (orthonormalized here)."""
    w = grid.weights
    g = np.real((basis_rows * w) @ np.conj(basis_rows).T)
    # orthogonal projector coefficients via the Gram solve
    coef = np.linalg.solve(g, np.real((basis_rows * w) @ np.conj(x).T))
    r = x - coef.T @ basis_rows
    return float(np.sum(np.real(np.sum(w * r * np.conj(r), axis=-1))))


@pytest.fixture
def ensemble(grid, rng):
    return random_field(rng, grid, batch=(40,))


class TestMean:
    def test_opposites(self, grid, rng):
        v = random_field(rng, grid)
        assert norm(mean_field(stack([v, -v]))) == 0.0

    def test_single(self, grid, rng):
        v = random_field(rng, grid)
        assert mean_field(stack([v])).allclose(v, atol=0)

    def test_constant_offset(self, grid):
        s = stack([modes(grid, (1, "cos", 1.0)), modes(grid, (1, "cos", 1.0), (0, "cos", 2.0))])
        assert mean_field(s).allclose(modes(grid, (1, "cos", 1.0), (0, "cos", 1.0)), atol=1e-15)

    def test_empty(self, grid):
        with pytest.raises(ValueError):
            mean_field(Field.zeros(grid, (0,)))


class TestComputePod:
    def test_rank_one(self, grid):
        c = modes(grid, (1, "cos", 1.0))
        b = compute_pod(stack([c, c * 2.0]), 1)
        assert b.mean.allclose(c * 1.5, atol=1e-15)
        assert b.modes[0].allclose(c * np.sqrt(2.0), atol=1e-12)
        assert inner_product(b.modes[0], b.modes[0]) == pytest.approx(1.0, abs=1e-12)

    def test_orthonormal(self, ensemble):
        b = compute_pod(ensemble, 8)
        assert np.allclose(gram(list(b.modes)), np.eye(8), atol=1e-10)

    def test_singular_values_descending(self, ensemble):
        s = compute_pod(ensemble, 4).singular_values
        assert np.all(np.diff(s) <= 1e-12) and np.all(s >= 0)

    def test_sign_convention(self, ensemble):
        b = compute_pod(ensemble, 6)
        for c in b.modes.coeffs:
            dof = np.concatenate([c.real, c.imag])
            assert dof[np.argmax(np.abs(dof))] > 0

    def test_deterministic(self, ensemble):
        assert np.array_equal(compute_pod(ensemble, 5).modes.coeffs, compute_pod(ensemble, 5).modes.coeffs)

    def test_rank_error(self, grid):
        c = modes(grid, (1, "cos", 1.0))
        with pytest.raises(RankError):
            compute_pod(stack([c, c * 2.0, c * 3.0]), 2)

    def test_too_many_modes(self, ensemble):
        with pytest.raises(RankError):
            compute_pod(ensemble[:3], 4)

    def test_eckart_young(self, grid, ensemble):
        # optimal residual is the tail of the singular spectrum of the weighted real matrix
        x = ensemble.coeffs - mean_field(ensemble).coeffs
        sw = np.sqrt(grid.weights)
        real = np.concatenate([(x * sw).real, (x * sw).imag[:, 1:]], axis=1)
        sv = np.linalg.svd(real, compute_uv=False)
        for n in (1, 3, 6):
            b = compute_pod(ensemble, n)
            assert residual_energy(x, b.modes.coeffs, grid) == pytest.approx(np.sum(sv[n:] ** 2), rel=1e-9)
            assert np.allclose(b.singular_values[: len(sv)], sv, rtol=1e-9)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_brute_force_subset_spans(self, grid, rng, n):
        # five snapshots; candidates are spans of every subset of centered snapshots
        # and random combinations of them
        snaps = random_field(rng, grid, batch=(5,))
        x = snaps.coeffs - mean_field(snaps).coeffs
        best = np.inf
        for idx in itertools.combinations(range(5), n):
            best = min(best, residual_energy(x, x[list(idx)], grid))
        for _ in range(2000):
            best = min(best, residual_energy(x, rng.standard_normal((n, 5)) @ x, grid))
        pod = residual_energy(x, compute_pod(snaps, n).modes.coeffs, grid)
        assert pod <= best + 1e-12

    @pytest.mark.parametrize("n", [1, 3])
    def test_brute_force_exhaustive(self, grid, rng, n):
        # the centered span of five snapshots is four-dimensional; lines (n=1) and
        # hyperplanes (n=3) of it are enumerated by a direction grid on the 3-sphere
        snaps = random_field(rng, grid, batch=(5,))
        x = snaps.coeffs - mean_field(snaps).coeffs
        sw = np.sqrt(grid.weights)
        real = np.concatenate([(x * sw).real, (x * sw).imag[:, 1:]], axis=1)
        q, _ = np.linalg.qr(real.T)
        y = real @ q[:, :4]
        m = 64
        half = np.linspace(0, np.pi, m)
        full = np.linspace(0, 2 * np.pi, 2 * m, endpoint=False)
        a1, a2, a3 = (v.ravel() for v in np.meshgrid(half, half, full, indexing="ij"))
        v = np.stack([np.cos(a1), np.sin(a1) * np.cos(a2), np.sin(a1) * np.sin(a2) * np.cos(a3),
                      np.sin(a1) * np.sin(a2) * np.sin(a3)])
        along = np.sum((y @ v) ** 2, axis=0)
        total = np.sum(y**2)
        best = total - along.max() if n == 1 else along.min()
        pod = residual_energy(x, compute_pod(snaps, n).modes.coeffs, grid)
        assert pod <= best + 1e-12
        assert pod == pytest.approx(best, rel=1e-2)

    def test_reconstruction_error_monotone(self, ensemble):
        errs = []
        for n in range(1, 11):
            b = compute_pod(ensemble, n)
            errs.append(float(np.sum(np.asarray(norm(reconstruct(b, project(b, ensemble)) - ensemble)) ** 2)))
        assert np.all(np.diff(errs) <= 1e-12)

    def test_uncentered(self, grid):
        c = modes(grid, (1, "cos", 1.0))
        b = compute_pod(stack([c, c * 2.0]), 1, center=False)
        assert norm(b.mean) == 0.0
        assert b.modes[0].allclose(c * np.sqrt(2.0), atol=1e-12)


class TestProjection:
    def test_mean_projects_to_zero(self, ensemble):
        b = compute_pod(ensemble, 4)
        assert np.allclose(project(b, b.mean), 0.0, atol=1e-13)

    def test_single_mode(self, ensemble):
        b = compute_pod(ensemble, 4)
        a = project(b, b.mean + b.modes[1] * 3.0)
        assert np.allclose(a, [0, 3, 0, 0], atol=1e-12)

    def test_basis_element_round_trip(self, ensemble):
        b = compute_pod(ensemble, 4)
        u = b.mean + b.modes[2]
        assert reconstruct(b, project(b, u)).allclose(u, atol=1e-12)

    def test_zero_vector(self, ensemble):
        b = compute_pod(ensemble, 4)
        assert reconstruct(b, np.zeros(4)).allclose(b.mean, atol=0)

    def test_idempotent(self, ensemble, rng):
        b = compute_pod(ensemble, 5)
        a = rng.standard_normal((10, 5))
        assert np.allclose(project(b, reconstruct(b, a)), a, atol=1e-12)

    def test_parseval(self, ensemble, rng, grid):
        b = compute_pod(ensemble, 5)
        u = random_field(rng, grid, batch=(10,))
        a = project(b, u)
        lhs = np.asarray(norm(reconstruct(b, a) - b.mean)) ** 2
        assert np.allclose(lhs, np.sum(a**2, axis=1), rtol=1e-12, atol=1e-13)

    def test_optimality(self, ensemble, rng, grid):
        b = compute_pod(ensemble, 4)
        u = random_field(rng, grid)
        best = norm(u - reconstruct(b, project(b, u)))
        for _ in range(200):
            trial = project(b, u) + 0.1 * rng.standard_normal(4)
            assert best <= norm(u - reconstruct(b, trial)) + 1e-14

    def test_dimension_mismatch(self, ensemble):
        b = compute_pod(ensemble, 4)
        with pytest.raises(DimensionError):
            reconstruct(b, np.zeros(3))

    def test_truncate(self, ensemble):
        b = compute_pod(ensemble, 6)
        t = b.truncate(3)
        assert t.n == 3 and np.array_equal(t.modes.coeffs, b.modes.coeffs[:3])
        with pytest.raises(DimensionError):
            b.truncate(7)


class TestBasisFile:
    def test_round_trip(self, ensemble, grid, tmp_path):
        b = compute_pod(ensemble, 4)
        p = write_basis_csv(tmp_path / "basis.csv", b)
        assert p.read_text().splitlines()[0] == "x,mean,phi_1,phi_2,phi_3,phi_4"
        back = read_basis_csv(p, grid)
        assert isinstance(back, ReducedBasis)
        assert np.allclose(back.modes.coeffs, b.modes.coeffs, atol=1e-14)
        assert np.allclose(back.mean.coeffs, b.mean.coeffs, atol=1e-14)
        assert np.array_equal(back.singular_values, b.singular_values)

    def test_missing(self, grid, tmp_path):
        with pytest.raises(FileNotFoundError, match="nope.csv"):
            read_basis_csv(tmp_path / "nope.csv", grid)


@pytest.mark.slow
class TestKseBasis:
    def test_orthonormal_and_projection_error(self, kse_train_window):
        _, _, win = kse_train_window
        b = compute_pod(win.aligned, 4)
        assert np.allclose(gram(list(b.modes)), np.eye(4), atol=1e-10)
        err = np.sqrt(np.sum(np.asarray(norm(reconstruct(b, project(b, win.aligned)) - win.aligned)) ** 2)
                      / np.sum(np.asarray(norm(win.aligned)) ** 2))
        assert err == pytest.approx(0.00402, abs=0.001)
