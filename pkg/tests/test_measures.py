import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fourwave.kernels import AFFINE, parse_weight
from fourwave.measures import (
    DiscreteMeasure,
    load_measure_csv,
    moment,
    moment_set,
    phi_transform,
    quantize,
    save_measure_csv,
    tv_norm,
    weak_distance,
)

RNG = np.random.default_rng(7)


def random_measure(m=12, signed=False):
    pos = RNG.uniform(0.0, 20.0, size=m)
    w = RNG.uniform(0.1, 2.0, size=m)
    if signed:
        w *= RNG.choice([-1.0, 1.0], size=m)
    return DiscreteMeasure.from_points(pos, w)


class TestMoment:
    def test_identity_on_delta(self):
        assert moment(DiscreteMeasure.delta(1.0), lambda w: w) == 1.0

    def test_affine_weight(self):
        mu = DiscreteMeasure.from_points([1.0, 3.0], [0.5, 0.5])
        assert moment(mu, AFFINE) == 3.0

    def test_fractional_at_zero(self):
        mu = DiscreteMeasure.delta(0.0)
        assert moment(mu, parse_weight("fractional:gamma=0.5")) == 0.0

    def test_permutation_invariance_large(self):
        m = 100_000
        pos = RNG.uniform(0.0, 10.0, size=m)
        w = RNG.uniform(-1.0, 1.0, size=m)
        mu = DiscreteMeasure.from_points(pos, w)
        perm = RNG.permutation(m)
        nu = DiscreteMeasure.from_points(pos[perm], w[perm])
        a, b = moment(mu, lambda x: np.sin(x)), moment(nu, lambda x: np.sin(x))
        assert abs(a - b) <= 1e-13 * max(1.0, abs(a))


class TestTvNorm:
    def test_cancellation(self):
        mu = DiscreteMeasure.delta(1.0) - DiscreteMeasure.delta(1.0)
        assert tv_norm(mu) == 0.0

    def test_disjoint(self):
        assert tv_norm(DiscreteMeasure.delta(1.0) - DiscreteMeasure.delta(2.0)) == 2.0

    def test_same_atom_partial(self):
        mu = DiscreteMeasure.delta(1.0, 0.5) - DiscreteMeasure.delta(1.0, 0.25)
        assert tv_norm(mu) == 0.25


class TestWeakDistance:
    def test_identity(self):
        mu = random_measure()
        assert weak_distance(mu, mu) == 0.0

    def test_dominated_by_tv(self):
        assert weak_distance(DiscreteMeasure.delta(1.0), DiscreteMeasure.delta(2.0)) <= 2.0

    def test_converging_deltas_monotone(self):
        # mu_n = delta_{1 + 1/n} -> delta_1: the truncated series must
        # decrease strictly along n = 1, 2, 4, ..., 1024
        target = DiscreteMeasure.delta(1.0)
        vals = [weak_distance(DiscreteMeasure.delta(1.0 + 1.0 / n), target)
                for n in [2 ** j for j in range(11)]]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 0.01 * vals[0] + 1e-6

    def test_symmetry_exact(self):
        mu, nu = random_measure(), random_measure()
        assert weak_distance(mu, nu) == weak_distance(nu, mu)

    def test_triangle_inequality(self):
        for _ in range(50):
            mu, nu, tau = random_measure(5), random_measure(5), random_measure(5)
            d13 = weak_distance(mu, tau)
            assert d13 <= weak_distance(mu, nu) + weak_distance(nu, tau) + 1e-12

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.floats(0.0, 50.0), st.floats(0.01, 3.0)),
                    min_size=0, max_size=8),
           st.lists(st.tuples(st.floats(0.0, 50.0), st.floats(0.01, 3.0)),
                    min_size=0, max_size=8))
    def test_dominated_by_tv_property(self, atoms_a, atoms_b):
        mu = DiscreteMeasure.from_points([a for a, _ in atoms_a], [w for _, w in atoms_a])
        nu = DiscreteMeasure.from_points([a for a, _ in atoms_b], [w for _, w in atoms_b])
        assert weak_distance(mu, nu) <= tv_norm(mu - nu) + 1e-12


class TestQuantize:
    def test_nearest_multiple(self):
        q = quantize(DiscreteMeasure.delta(1.26), 0.5)
        assert q.positions[0] == 1.5

    def test_tie_to_even_multiple(self):
        q = quantize(DiscreteMeasure.delta(1.25), 0.5)
        assert q.positions[0] == 1.0

    def test_mass_exact(self):
        mu = random_measure(500)
        q = quantize(mu, 2.0 ** -10)
        assert q.mass() == mu.mass()

    def test_energy_shift_bounded(self):
        mu = random_measure(200)
        h = 0.25
        q = quantize(mu, h)
        shift = abs(moment(q, lambda w: w) - moment(mu, lambda w: w))
        assert shift <= h / 2 * tv_norm(mu) + 1e-12


class TestPhiTransform:
    def test_affine_delta(self):
        out = phi_transform(DiscreteMeasure.delta(1.0), AFFINE)
        assert out.positions[0] == 1.0 and out.weights[0] == 2.0

    def test_fractional_kills_zero_atom(self):
        out = phi_transform(DiscreteMeasure.delta(0.0), parse_weight("fractional:gamma=0.5"))
        assert len(out) == 0

    def test_mass_is_phi_moment(self):
        mu = random_measure(50)
        assert phi_transform(mu, AFFINE).mass() == pytest.approx(moment(mu, AFFINE), rel=1e-15)


class TestMomentSet:
    def test_affine_identity(self):
        mu = random_measure(2000)
        ms = moment_set(mu, AFFINE)
        assert abs(ms.phi - (ms.W + ms.E)) <= 1e-13 * max(1.0, abs(ms.phi))

    def test_nonnegative_entries(self):
        ms = moment_set(random_measure(30), AFFINE)
        assert min(ms.W, ms.E, ms.phi, ms.phi2) >= 0.0


class TestCompactAndGrid:
    def test_compact_merges_exact_duplicates(self):
        mu = DiscreteMeasure.from_points([1.0, 1.0, 2.0], [0.5, 0.25, 1.0]).compact()
        assert len(mu) == 2
        assert mu.weights[0] == 0.75

    def test_grid_mode_positions(self):
        mu = DiscreteMeasure.from_grid([3, 1, 2], [1.0, 1.0, 1.0], 0.25)
        assert list(mu.positions) == [0.25, 0.5, 0.75]

    def test_grid_mismatch_rejected(self):
        a = DiscreteMeasure.from_grid([1], [1.0], 0.5)
        b = DiscreteMeasure.from_grid([1], [1.0], 0.25)
        with pytest.raises(ValueError):
            _ = a + b


class TestCsv:
    def test_round_trip_continuous(self, tmp_path):
        mu = random_measure(20)
        path = tmp_path / "m.csv"
        save_measure_csv(mu, path)
        back = load_measure_csv(path)
        assert np.array_equal(back.positions, mu.positions)
        assert np.array_equal(back.weights, mu.weights)

    def test_round_trip_grid(self, tmp_path):
        mu = DiscreteMeasure.from_grid([1, 5, 9], [0.1, 0.2, 0.7], 2.0 ** -20)
        path = tmp_path / "m.csv"
        save_measure_csv(mu, path)
        back = load_measure_csv(path)
        assert back.is_grid and back.h == mu.h
        assert np.array_equal(back.idx, mu.idx)
        assert np.array_equal(back.weights, mu.weights)

    def test_header_format(self, tmp_path):
        path = tmp_path / "m.csv"
        save_measure_csv(DiscreteMeasure.from_grid([1], [1.0], 0.5), path)
        lines = path.read_text().splitlines()
        assert lines[0] == "# h=0.5"
        assert lines[1] == "omega,weight"
