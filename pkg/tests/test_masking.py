import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wearimpute.frame import TimeSeriesFrame
from wearimpute.masking import (
    ALL_SENSORS,
    DEFAULT_CLASSES,
    Gap,
    LengthClasses,
    MaskPlan,
    apply,
    mask_all_sensors,
    mask_by_length_class,
    mask_by_ratio,
    restore,
)


def make_frame(c=3, t=1000, seed=0, missing=0.0):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((c, t))
    if missing:
        v[rng.random((c, t)) < missing] = np.nan
    return TimeSeriesFrame.from_array(v)


@pytest.fixture
def frame():
    return make_frame()


class TestMaskByRatio:
    def test_zero_ratio_is_empty(self, frame):
        assert mask_by_ratio(frame, 0.0, (1, 10), 0).gaps == []

    def test_fixed_length_arithmetic(self):
        f = make_frame(1, 1000)
        plan = mask_by_ratio(f, 0.1, (5, 5), 3)
        assert len(plan.gaps) == 20
        assert abs(plan.cell_mask(f.observed).sum() - 100) <= 1

    def test_same_seed_same_plan(self, frame):
        a = mask_by_ratio(frame, 0.1, (1, 30), 42)
        b = mask_by_ratio(frame, 0.1, (1, 30), 42)
        assert a.dumps() == b.dumps()

    def test_different_seeds_differ(self, frame):
        base = mask_by_ratio(frame, 0.1, (1, 30), 0).gaps
        for seed in range(1, 101):
            assert mask_by_ratio(frame, 0.1, (1, 30), seed).gaps != base

    def test_infeasible_packing_raises(self):
        with pytest.raises(ValueError):
            mask_by_ratio(make_frame(1, 100), 0.9, (40, 40), 0)

    @pytest.mark.parametrize("ratio", [-0.1, 1.0])
    def test_ratio_domain(self, frame, ratio):
        with pytest.raises(ValueError):
            mask_by_ratio(frame, ratio, (1, 5), 0)

    def test_all_sensors_pattern_shares_intervals(self, frame):
        plan = mask_by_ratio(frame, 0.05, (3, 10), 1, pattern=ALL_SENSORS)
        per_channel = [{(g.start, g.length) for g in plan.gaps if g.channel == c} for c in range(3)]
        assert per_channel[0] == per_channel[1] == per_channel[2]

    @settings(max_examples=40, deadline=None)
    @given(
        seed=st.integers(0, 2**31),
        ratio=st.floats(0.01, 0.3),
        lo=st.integers(1, 10),
        span=st.integers(0, 20),
        missing=st.sampled_from([0.0, 0.05]),
    )
    def test_invariants(self, seed, ratio, lo, span, missing):
        f = make_frame(2, 600, seed % 97, missing)
        try:
            plan = mask_by_ratio(f, ratio, (lo, lo + span), seed)
        except ValueError:
            return  # an infeasible draw is an allowed outcome
        plan.validate()  # gaps do not overlap and lie inside the frame
        cells = plan.cell_mask(f.observed)
        # never hide cells that were already missing
        assert not (cells & ~f.observed).any()
        # every gap sits on observed cells only, so the gaps tile the hidden set
        assert cells.sum() == plan.n_cells()
        for c in range(2):
            target = round(ratio * f.observed[c].sum())
            assert abs(cells[c].sum() - target) <= 1
        for g in plan.gaps:
            assert lo <= g.length <= lo + span


class TestMaskByLengthClass:
    def test_short_gap_in_range(self):
        plan = mask_by_length_class(make_frame(1, 1440), "S", 1, 0)
        assert len(plan.gaps) == 1 and 1 <= plan.gaps[0].length <= 5

    def test_long_gaps_stay_inside_frame(self):
        f = make_frame(2, 400)
        for seed in range(1000):
            plan = mask_by_length_class(f, "L", 2, seed)
            for g in plan.gaps:
                assert g.start + g.length <= f.n_times
                assert 31 <= g.length <= 120
                assert g.length_class == "L"

    @pytest.mark.parametrize("cls", ["S", "M", "L"])
    def test_cell_count_is_sum_of_lengths(self, frame, cls):
        plan = mask_by_length_class(frame, cls, 3, 9)
        assert plan.cell_mask(frame.observed).sum() == sum(g.length for g in plan.gaps)

    def test_infeasible(self):
        with pytest.raises(ValueError):
            mask_by_length_class(make_frame(1, 100), "L", 10, 0)

    def test_unknown_class(self, frame):
        with pytest.raises(ValueError):
            mask_by_length_class(frame, "XL", 1, 0)

    def test_custom_classes(self, frame):
        classes = LengthClasses(S=(2, 2), M=(7, 7), L=(50, 50))
        plan = mask_by_length_class(frame, "M", 4, 0, classes)
        assert {g.length for g in plan.gaps} == {7}


class TestMaskAllSensors:
    def test_ten_channels_thirty_steps(self):
        f = make_frame(10, 200)
        plan = mask_all_sensors(f, 50, 30)
        assert plan.cell_mask(f.observed).sum() == 300
        assert {(g.start, g.length) for g in plan.gaps} == {(50, 30)}
        assert len(plan.gaps) == 10

    def test_pre_existing_missing_cells_excluded(self):
        f = make_frame(2, 100)
        f.observed[0, 55] = False
        f.values[0, 55] = np.nan
        cells = mask_all_sensors(f, 50, 10).cell_mask(f.observed)
        assert cells.sum() == 19 and not cells[0, 55]

    @pytest.mark.parametrize("start,length", [(-1, 5), (95, 10), (0, 0)])
    def test_out_of_range(self, start, length):
        with pytest.raises(ValueError):
            mask_all_sensors(make_frame(1, 100), start, length)


class TestApply:
    def test_round_trip_is_bit_identical(self, frame):
        plan = mask_by_ratio(frame, 0.2, (1, 40), 5)
        masked, truth = apply(frame, plan)
        assert restore(masked, truth).equals(frame)

    def test_original_untouched(self, frame):
        before = frame.copy()
        apply(frame, mask_by_ratio(frame, 0.2, (1, 40), 5))
        assert frame.equals(before)

    def test_empty_plan(self, frame):
        masked, truth = apply(frame, MaskPlan(frame.shape))
        assert masked.equals(frame) and truth.values.size == 0

    def test_observed_count_drops_by_plan_size(self):
        f = make_frame(3, 500, missing=0.1)
        plan = mask_by_ratio(f, 0.1, (1, 20), 2)
        masked, truth = apply(f, plan)
        assert masked.observed.sum() == f.observed.sum() - truth.mask.sum()
        # the two parts partition the original observed cells
        assert not (masked.observed & truth.mask).any()
        assert ((masked.observed | truth.mask) == f.observed).all()

    def test_shape_mismatch(self, frame):
        with pytest.raises(ValueError):
            apply(frame, MaskPlan((2, 10)))

    def test_overlapping_plan_rejected(self, frame):
        with pytest.raises(ValueError):
            apply(frame, MaskPlan(frame.shape, [Gap(0, 0, 5), Gap(0, 3, 5)]))


class TestSerialization:
    def test_text_round_trip(self, frame, tmp_path):
        plan = mask_by_ratio(frame, 0.1, (1, 30), 11)
        plan.save(tmp_path / "p.txt")
        back = MaskPlan.load(tmp_path / "p.txt")
        assert back.dumps() == plan.dumps()
        assert back.gaps == plan.gaps

    def test_length_class_lookup(self):
        assert [DEFAULT_CLASSES.classify(n) for n in (1, 5, 6, 30, 31, 120, 121)] == ["S", "S", "M", "M", "L", "L", "-"]
