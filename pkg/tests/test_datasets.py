import json
import shutil
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wearimpute.baselines import impute_linear
from wearimpute.datasets import (
    HarSpec,
    NOVARTIS_CHANNELS,
    UCIHAR_LABELS,
    WESAD_BINARY,
    autocorrelation,
    generate_har,
    generate_synthetic,
    load_novartis,
    load_ucihar,
    load_wesad,
    sinusoid_mixture,
    split_subjects,
    wearable_suite_spec,
)
from wearimpute.frame import (
    SchemaError,
    TimeSeriesFrame,
    load_frames_csv,
    load_frames_npz,
    save_frames_csv,
    save_frames_npz,
)
from wearimpute.masking import mask_by_length_class, apply
from wearimpute.signal import label_window_offsets, standardize

from .oracles import homogeneous_windows_brute

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="module")
def novartis():
    return load_novartis(FIXTURES / "novartis" / "minute.csv")


@pytest.fixture(scope="module")
def wesad():
    return load_wesad(FIXTURES / "wesad", split_seed=0, n_train=2)


@pytest.fixture(scope="module")
def ucihar():
    return load_ucihar(FIXTURES / "ucihar")


@pytest.fixture(scope="module")
def suite():
    return generate_synthetic(wearable_suite_spec(seed=0, n_subjects=2, days_per_subject=1))


class TestFrameIO:
    def _frame(self, seed=0):
        rng = np.random.default_rng(seed)
        v = rng.standard_normal((3, 50)) * 1e3
        v[rng.random(v.shape) < 0.1] = np.nan
        return TimeSeriesFrame.from_array(v, "1/60", names=["a", "b", "c"], subject_id="p1", start_time=120.0)

    def test_csv_round_trip_is_bit_identical(self, tmp_path):
        frames = [self._frame(0), self._frame(1).replace(subject_id="p2", start_time=0.0)]
        save_frames_csv(frames, tmp_path / "f.csv")
        back = load_frames_csv(tmp_path / "f.csv")
        assert all(a.equals(b) for a, b in zip(frames, back))

    def test_npz_round_trip(self, tmp_path):
        f = self._frame()
        save_frames_npz([f], tmp_path / "f.npz")
        assert load_frames_npz(tmp_path / "f.npz")[0].equals(f)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=2, max_size=20))
    def test_csv_round_trip_any_float(self, tmp_path_factory, xs):
        path = tmp_path_factory.mktemp("rt") / "x.csv"
        f = TimeSeriesFrame.from_array(np.array(xs)[None])
        save_frames_csv([f], path)
        assert load_frames_csv(path)[0].equals(f)

    def test_non_uniform_timestamps_rejected(self, tmp_path):
        save_frames_csv([self._frame()], tmp_path / "f.csv")
        lines = (tmp_path / "f.csv").read_text().splitlines()
        lines[5] = "999999.0" + lines[5][lines[5].index(","):]
        (tmp_path / "f.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(SchemaError):
            load_frames_csv(tmp_path / "f.csv")

    def test_unknown_column_named(self, tmp_path):
        save_frames_csv([self._frame()], tmp_path / "f.csv")
        text = (tmp_path / "f.csv").read_text().replace("timestamp,subject_id,a,b,c", "timestamp,subject_id,a,b,zz", 1)
        (tmp_path / "f.csv").write_text(text)
        with pytest.raises(SchemaError, match="zz"):
            load_frames_csv(tmp_path / "f.csv")

    def test_missing_sidecar(self, tmp_path):
        (tmp_path / "f.csv").write_text("timestamp,subject_id,a\n0.0,p,1.0\n")
        with pytest.raises(SchemaError):
            load_frames_csv(tmp_path / "f.csv")


class TestNovartis:
    def test_one_frame_per_day(self, novartis):
        assert len(novartis.frames) == 2
        for f in novartis.frames:
            assert f.channel_names == list(NOVARTIS_CHANNELS)
            assert f.n_times == 1440 and f.period_s == 60.0

    def test_fully_observed_day(self, novartis):
        assert novartis.frames[0].observed.all()
        assert set(novartis.frames[0].missing_fraction().values()) == {0.0}

    def test_device_off_hour(self, novartis):
        miss = ~novartis.frames[1].observed
        assert miss.sum() == 600
        cols = np.flatnonzero(miss.any(axis=0))
        np.testing.assert_array_equal(cols, np.arange(600, 660))
        assert miss[:, 600:660].all()

    def test_missingness_summary(self, novartis):
        assert novartis.missing_summary == pytest.approx({c: 100 * 60 / 2880 for c in NOVARTIS_CHANNELS})

    def test_missing_required_column(self, tmp_path):
        shutil.copytree(FIXTURES / "novartis", tmp_path / "n")
        side = json.loads((tmp_path / "n" / "minute.csv.json").read_text())
        csv = (tmp_path / "n" / "minute.csv").read_text().replace(",HRV,", ",XHRV,", 1)
        side["channels"][1]["name"] = "XHRV"
        (tmp_path / "n" / "minute.csv").write_text(csv)
        (tmp_path / "n" / "minute.csv.json").write_text(json.dumps(side))
        with pytest.raises(SchemaError, match="HRV"):
            load_novartis(tmp_path / "n" / "minute.csv")


class TestWesad:
    def test_window_shape_and_labels(self, wesad):
        for w in wesad.windows:
            assert w.values.shape == (6, 240)
        assert {w.label for w in wesad.windows} == {"baseline", "stress", "amusement"}

    def test_counts_match_hand_trace(self, wesad):
        # 40 readings of code 0, 600 baseline, 500 stress/amusement at 4 Hz
        for s in ("S2", "S3", "S4"):
            assert [w.offset for w in wesad.windows if w.subject_id == s] == [40, 279, 640, 879]

    def test_counts_match_step_through_oracle(self, wesad):
        labels = [0] * 40 + [1] * 600 + [2] * 500
        assert label_window_offsets(labels, 240, 239, {1, 2, 3}) == homogeneous_windows_brute(labels, 240, 239, {1, 2, 3})

    def test_binary_task(self, wesad):
        x, y, subs, vocab = wesad.arrays(WESAD_BINARY, ["non-stress", "stress"])
        assert vocab == ["non-stress", "stress"]
        assert y.tolist().count(1) == 4 and y.tolist().count(0) == 8

    def test_split_is_disjoint(self, wesad):
        m = wesad.manifest
        assert set(m.train_subjects).isdisjoint(m.test_subjects)
        assert sorted(m.train_subjects + m.test_subjects) == ["S2", "S3", "S4"]

    def test_missing_channel_file(self, tmp_path):
        shutil.copytree(FIXTURES / "wesad", tmp_path / "w")
        (tmp_path / "w" / "S3" / "TEMP.csv").unlink()
        with pytest.raises(FileNotFoundError, match="TEMP"):
            load_wesad(tmp_path / "w")


class TestUciHar:
    def test_window_shape(self, ucihar):
        for w in ucihar.windows:
            assert w.values.shape == (6, 128)

    def test_segment_of_256_gives_three_windows(self, ucihar):
        first = [w.offset for w in ucihar.windows if w.label == "standing"]
        assert first == [50, 114, 178]

    def test_count_formula(self, ucihar):
        for label, n in (("walking", 300), ("sitting", 256), ("upstairs", 300)):
            assert sum(w.label == label for w in ucihar.windows) == (n - 128) // 64 + 1

    def test_transitions_dropped(self, ucihar):
        assert set(UCIHAR_LABELS.values()) >= {w.label for w in ucihar.windows}

    def test_vocabulary_and_split(self, ucihar):
        assert ucihar.manifest.labels == ["walking", "upstairs", "downstairs", "sitting", "standing", "laying"]
        assert ucihar.manifest.train_subjects == ["1"] and ucihar.manifest.test_subjects == ["2"]
        assert ucihar.manifest.split == "canonical"

    def test_gravity_removed(self, ucihar):
        acc = np.stack([w.values[:3] for w in ucihar.windows])
        assert abs(acc.mean()) < 0.05

    def test_seeded_random_split(self):
        a = load_ucihar(FIXTURES / "ucihar", split="random", split_seed=3).manifest
        b = load_ucihar(FIXTURES / "ucihar", split="random", split_seed=3).manifest
        assert (a.train_subjects, a.test_subjects) == (b.train_subjects, b.test_subjects)
        assert a.split == "seeded(3)"


class TestSplits:
    @given(st.sets(st.integers(0, 99), min_size=2, max_size=30), st.integers(0, 1000))
    def test_pure_function_of_subjects_and_seed(self, subjects, seed):
        subs = [f"s{i}" for i in subjects]
        n = len(subs) // 2 or 1
        a = split_subjects(subs, n, seed)
        b = split_subjects(list(reversed(subs)), n, seed)
        assert a == b
        assert set(a[0]).isdisjoint(a[1]) and len(a[0]) == n

    def test_rejects_empty_side(self):
        with pytest.raises(ValueError):
            split_subjects(["a", "b"], 2, 0)


class TestSynthetic:
    def test_deterministic(self):
        spec = wearable_suite_spec(seed=4, n_subjects=1, days_per_subject=1)
        a, b = generate_synthetic(spec), generate_synthetic(spec)
        assert all(x.equals(y) for x, y in zip(a, b))

    def test_dynamic_channels_calibrated(self, suite):
        for f in suite:
            for c in range(6):
                r1 = autocorrelation(f.values[c], 1)
                assert 0.3 < r1 < 0.95
                assert abs(autocorrelation(f.values[c], 10)) < 0.5

    def test_smooth_channels_persistent(self, suite):
        for f in suite:
            for c in (6, 7, 8):
                assert autocorrelation(f.values[c], 30) > 0.95

    def test_discrete_channel_is_integer(self, suite):
        for f in suite:
            step = f.values[9]
            assert np.array_equal(step, np.round(step)) and (step >= 0).all()
            assert (step == 0).mean() > 0.5

    def test_linear_on_smooth_short_gaps(self, suite):
        z, _ = standardize(suite[0])
        for c in (6, 7, 8):
            one = z.select([z.channel_names[c]])
            errs = []
            for seed in range(20):
                masked, truth = apply(one, mask_by_length_class(one, "S", 24, seed))
                filled = impute_linear(masked.values[0], masked.observed[0])
                errs.append(np.abs(filled[truth.mask[0]] - truth.values).mean())
            assert np.mean(errs) < 0.05

    def test_native_missingness_hits_all_channels(self):
        spec = wearable_suite_spec(seed=1, n_subjects=1, days_per_subject=1)
        spec.native_missing = 0.1
        f = generate_synthetic(spec)[0]
        miss = ~f.observed
        assert (miss == miss[0]).all() and miss[0].mean() >= 0.1

    def test_sinusoid_mixture_shape_and_seed(self):
        a = sinusoid_mixture(5, n_channels=4, window_len=120, seed=2)
        assert a.shape == (5, 120, 4)
        np.testing.assert_array_equal(a, sinusoid_mixture(5, n_channels=4, window_len=120, seed=2))

    def test_har_windows(self):
        ws = generate_har(HarSpec(n_subjects=2, windows_per_class=3))
        x, y, subs, vocab = ws.arrays()
        assert x.shape == (36, 6, 128)
        assert sorted(set(y.tolist())) == list(range(6))
        assert sorted(set(subs)) == ["s00", "s01"]

    def test_autocorrelation_of_trend_is_high(self):
        assert autocorrelation(np.arange(100.0), 30) == pytest.approx(1.0)
        assert autocorrelation(np.ones(10), 0) == 1.0
