import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wearimpute.baselines import (
    ImputerDescriptor,
    impute_frame,
    impute_linear,
    impute_mean,
    impute_median,
    impute_mode,
    impute_nearest,
    impute_spline,
)
from wearimpute.frame import TimeSeriesFrame

from .oracles import median_brute, mode_brute, nearest_brute


def random_case(rng, n_max=12, integer=False):
    n = int(rng.integers(2, n_max + 1))
    x = rng.integers(0, 4, n).astype(float) if integer else rng.standard_normal(n)
    obs = rng.random(n) < 0.6
    if not obs.any():
        obs[rng.integers(n)] = True
    return x, obs


@pytest.fixture
def rng():
    return np.random.default_rng(7)


class TestSimpleStatistics:
    def test_mean(self):
        out = impute_mean([2.0, np.nan, 4.0])
        assert out[1] == 3.0

    def test_median_and_mode(self):
        x = [1.0, 1.0, np.nan, 2.0, 100.0]
        assert impute_median(x)[2] == 1.5
        assert impute_mode(x)[2] == 1.0

    def test_mode_on_step_like_series(self):
        assert impute_mode([0.0, 0.0, 0.0, 5.0, 0.0, np.nan])[-1] == 0.0

    def test_mode_returns_an_observed_value(self):
        z = -0.61234567891  # a standardized zero step count
        out = impute_mode([z, z, 1.7, z, np.nan])
        assert out[-1] == z
        assert out[-1] == impute_median([z, z, 1.7, z, np.nan])[-1]

    @pytest.mark.parametrize("fn", [impute_mean, impute_median, impute_mode, impute_nearest, impute_linear, impute_spline])
    def test_nothing_observed(self, fn):
        with pytest.raises(ValueError):
            fn([np.nan, np.nan, np.nan])


class TestNearest:
    def setup_method(self):
        self.x = np.full(11, np.nan)
        self.x[0], self.x[10] = 1.0, 9.0

    def test_picks_closer_anchor(self):
        out = impute_nearest(self.x)
        assert out[3] == 1.0 and out[7] == 9.0

    def test_tie_goes_to_earlier(self):
        assert impute_nearest(self.x)[5] == 1.0

    def test_single_anchor_is_constant(self):
        x = np.full(6, np.nan)
        x[2] = 4.0
        np.testing.assert_array_equal(impute_nearest(x), np.full(6, 4.0))


class TestLinear:
    def test_hand_example(self):
        x = np.array([0.0, np.nan, np.nan, np.nan, np.nan, 10.0])
        np.testing.assert_array_equal(impute_linear(x), [0, 2, 4, 6, 8, 10])

    def test_boundary_gap_extends_nearest_value(self):
        np.testing.assert_array_equal(impute_linear([np.nan, 3.0, 5.0, np.nan]), [3, 3, 5, 5])

    @settings(max_examples=200)
    @given(
        a=st.floats(-100, 100),
        b=st.floats(-10, 10),
        mask=st.lists(st.booleans(), min_size=3, max_size=60),
    )
    def test_exact_on_linear_signals(self, a, b, mask):
        obs = np.array(mask)
        obs[0] = obs[-1] = True  # interior gaps only; boundary gaps hold end values
        t = np.arange(obs.size, dtype=float)
        x = a + b * t
        out = impute_linear(x, obs)
        np.testing.assert_allclose(out, x, rtol=0, atol=1e-9 * (1 + abs(a) + abs(b) * obs.size))


class TestSpline:
    @pytest.mark.parametrize("coeffs", [(1.0,), (0.5, -2.0), (0.0, 0.0, 1.0), (1.0, -0.3, 0.2, 0.05)])
    def test_cubic_reproduces_polynomials(self, coeffs):
        rng = np.random.default_rng(len(coeffs))
        t = np.arange(60, dtype=float)
        x = np.polyval(coeffs, t / 10.0)
        obs = rng.random(60) < 0.5
        obs[0] = obs[-1] = True
        np.testing.assert_allclose(impute_spline(x, obs), x, rtol=0, atol=1e-9)

    def test_quadratic_exact_on_lines(self):
        t = np.arange(30, dtype=float)
        x = 3 - 0.25 * t
        obs = np.ones(30, bool)
        obs[[4, 5, 6, 17, 20]] = False
        np.testing.assert_allclose(impute_spline(x, obs, order=2), x, atol=1e-9)

    def test_too_few_anchors(self):
        with pytest.raises(ValueError):
            impute_spline([1.0, np.nan, 2.0, np.nan, 3.0])

    def test_bad_order(self):
        with pytest.raises(ValueError):
            impute_spline(np.arange(10.0), order=5)


class TestBruteForceOracles:
    """Vectorized strategies must agree exactly with one-point-at-a-time versions."""

    def test_nearest(self, rng):
        for _ in range(1000):
            x, obs = random_case(rng)
            np.testing.assert_array_equal(impute_nearest(x, obs)[~obs], nearest_brute(x, obs)[~obs])

    def test_median(self, rng):
        for _ in range(1000):
            x, obs = random_case(rng)
            np.testing.assert_array_equal(impute_median(x, obs)[~obs], median_brute(x, obs)[~obs])

    def test_mode(self, rng):
        for _ in range(1000):
            x, obs = random_case(rng, integer=True)
            np.testing.assert_array_equal(impute_mode(x, obs)[~obs], mode_brute(x, obs)[~obs])

    def test_mode_with_rounding_bins(self, rng):
        for _ in range(1000):
            x, obs = random_case(rng, integer=True)
            x = x / 3.0 + rng.choice([0.0, 1e-8, -1e-8], x.size)  # near-equal values share a bin
            np.testing.assert_array_equal(impute_mode(x, obs)[~obs], mode_brute(x, obs)[~obs])


class TestContract:
    @settings(max_examples=100)
    @given(
        st.lists(st.floats(-1e3, 1e3), min_size=5, max_size=40),
        st.lists(st.booleans(), min_size=5, max_size=40),
        st.sampled_from(["mean", "median", "mode", "nearest", "linear", "spline", "quadratic"]),
    )
    def test_observed_points_pass_through(self, values, mask, kind):
        n = min(len(values), len(mask))
        x = np.array(values[:n])
        obs = np.array(mask[:n])
        obs[: 4] = True  # enough anchors for the cubic spline
        out = ImputerDescriptor.parse(kind).impute_series(x, obs)
        np.testing.assert_array_equal(out[obs], x[obs])
        assert np.all(np.isfinite(out))

    def test_frame_skips_empty_channels(self):
        v = np.array([[1.0, np.nan, 3.0], [np.nan, np.nan, np.nan]])
        out = impute_frame(TimeSeriesFrame.from_array(v), "linear")
        assert out.values[0, 1] == 2.0
        assert not out.observed[1].any()


class TestDescriptor:
    @pytest.mark.parametrize("text,label", [("spline", "spline"), ("spline:2", "spline:2"), ("mode:3", "mode"), ("linear", "linear")])
    def test_parse(self, text, label):
        assert ImputerDescriptor.parse(text).label == label

    @pytest.mark.parametrize("text", ["cubic", "spline:7", "linear:2", "quadratic:3"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            ImputerDescriptor.parse(text)
