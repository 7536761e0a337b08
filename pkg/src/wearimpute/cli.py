"""Command-line harness: preprocess, train, impute-bench, downstream, report.

Every command reads one YAML config (see :mod:`wearimpute.config`), validates
it before touching the output directory, copies it there verbatim and
appends a line to ``run_ledger.jsonl``. Report files carry no timestamps, so
re-running with the same config and seed rewrites them byte for byte.

Exit codes: 0 success, 2 configuration or input-schema error, 3 partial
experiment failure (some strategy or training run failed; the rest was
still written).
"""

from __future__ import annotations

import argparse
import csv
import fcntl
import io
import json
import logging
import os
import shutil
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import (
    REPORTED_PARAMETER_COUNT as CLASSIFIER_REPORTED_COUNT,
    ClassifierConfig,
    PatchClassifier,
    analytic_parameter_count as classifier_analytic,
    load_classifier,
    save_classifier,
    train_loso,
)
from .config import ConfigError, ExperimentConfig, load_config
from .datasets import (
    HarSpec,
    WESAD_BINARY,
    generate_har,
    generate_synthetic,
    load_novartis,
    load_ucihar,
    load_wesad,
    sinusoid_mixture,
    split_subjects,
    wearable_suite_spec,
)
from .experiments import (
    BenchResult,
    DownstreamRow,
    Failure,
    downstream_grid,
    length_benchmark,
    segment_benchmark,
    source_benchmark,
)
from .frame import SchemaError, TimeSeriesFrame, save_frames_npz
from .imputer import (
    REPORTED_PARAMETER_COUNT as IMPUTER_REPORTED_COUNT,
    ImputerConfig,
    TrainingDiverged,
    TransformerImputer,
    analytic_parameter_count as imputer_analytic,
    load_imputer,
    save_imputer,
    segments_from_frames,
    train_imputer,
    write_loss_curve,
)
from .masking import LengthClasses
from .metrics import METRICS, MetricsReport, Summary, aggregate, summarize
from .signal import ChannelStats

log = logging.getLogger("wearimpute")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 2, 3

REPORT_COLUMNS = ("group", "strategy", "mae", "rmse", "pearson", "spearman", "runs")
RUN_COLUMNS = ("experiment", "strategy", "group", "seed", "mae", "rmse", "pearson", "spearman", "n_points", "degenerate")
DOWNSTREAM_COLUMNS = ("task", "strategy", "rate", "accuracy", "seed")
SUMMARY_COLUMNS = ("task", "strategy", "rate", "accuracy", "mean", "std", "runs")
TABLE_FILES = {"sources": "table1", "lengths": "table2", "segments": "segments"}
FRAME_KINDS = ("synthetic-wearable", "sinusoid", "novartis")
WINDOW_KINDS = ("synthetic-har", "wesad", "ucihar")


# -- data ----------------------------------------------------------------------------


@dataclass
class FrameData:
    train: list[TimeSeriesFrame]
    test: list[TimeSeriesFrame]
    manifest: dict


@dataclass
class WindowData:
    x: np.ndarray  # (N, C, W)
    y: np.ndarray
    subjects: np.ndarray
    vocab: list
    channels: list[str]
    train_subjects: list[str]
    test_subjects: list[str]
    manifest: dict = field(default_factory=dict)

    def part(self, subjects) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        keep = np.isin(self.subjects, list(subjects))
        return self.x[keep], self.y[keep], self.subjects[keep]


def _holdout_last(subjects, k: int) -> tuple[list, list]:
    ordered = sorted(set(subjects), key=str)
    if not 0 < k < len(ordered):
        raise ConfigError(f"cannot hold out {k} of {len(ordered)} subjects")
    return ordered[:-k], ordered[-k:]


def load_data(cfg: ExperimentConfig) -> FrameData | WindowData:
    """Materialise the configured dataset and its subject split.

    Synthetic subjects are exchangeable, so the last ``test_subjects`` ids are
    held out; real datasets use a seeded split.
    """
    ds = cfg["dataset"]
    kind, params, k = ds["kind"], dict(ds["params"]), ds["test_subjects"]
    if kind == "synthetic-wearable":
        spec = wearable_suite_spec(**params)
        frames = generate_synthetic(spec)
        train_s, test_s = _holdout_last([f.subject_id for f in frames], k)
        manifest = {"name": kind, "fingerprint": spec.fingerprint(), "train_subjects": train_s, "test_subjects": test_s}
        return FrameData(
            [f for f in frames if f.subject_id in train_s], [f for f in frames if f.subject_id in test_s], manifest
        )
    if kind == "sinusoid":
        n_train, n_test = params.pop("n_train", 256), params.pop("n_test", 200)
        segs = sinusoid_mixture(n_train + n_test, **params)
        names = [f"x{c}" for c in range(segs.shape[2])]
        frames = [TimeSeriesFrame.from_array(s.T, names=names, subject_id=f"seg{i:05d}") for i, s in enumerate(segs)]
        manifest = {"name": kind, "params": ds["params"], "n_train": n_train, "n_test": n_test}
        return FrameData(frames[:n_train], frames[n_train:], manifest)
    if kind == "novartis":
        data = load_novartis(ds["path"], **params)
        subjects = sorted({f.subject_id for f in data.frames})
        train_s, test_s = split_subjects(subjects, len(subjects) - k, ds["split_seed"]) if k else (subjects, [])
        manifest = data.manifest.to_dict() | {"train_subjects": train_s, "test_subjects": test_s,
                                              "missing_percent": data.missing_summary}
        return FrameData(
            [f for f in data.frames if f.subject_id in train_s], [f for f in data.frames if f.subject_id in test_s],
            manifest,
        )
    if kind == "synthetic-har":
        ws = generate_har(HarSpec(**params))
        x, y, s, vocab = ws.arrays()
        train_s, test_s = _holdout_last(s.tolist(), k)
        return WindowData(x, y, s, vocab, ws.manifest.channels, train_s, test_s, ws.manifest.to_dict())
    if kind == "wesad":
        ws = load_wesad(ds["path"], split_seed=ds["split_seed"], **params)
        x, y, s, vocab = ws.arrays(WESAD_BINARY, ["non-stress", "stress"])
        m = ws.manifest
        return WindowData(x, y, s, vocab, m.channels, m.train_subjects, m.test_subjects, m.to_dict())
    if kind == "ucihar":
        ws = load_ucihar(ds["path"], split_seed=ds["split_seed"], **params)
        x, y, s, vocab = ws.arrays(labels=ws.manifest.labels)
        m = ws.manifest
        return WindowData(x, y, s, vocab, m.channels, m.train_subjects, m.test_subjects, m.to_dict())
    raise ConfigError(f"unknown dataset kind {kind!r}")


def data_shape(cfg: ExperimentConfig) -> tuple[int, int | None, int | None]:
    """(channels, window length or None, classes or None) known without loading data."""
    ds = cfg["dataset"]
    kind, p = ds["kind"], ds["params"]
    if kind == "synthetic-wearable":
        return 10, None, None
    if kind == "novartis":
        return len(p.get("channels", range(10))), None, None
    if kind == "sinusoid":
        return p.get("n_channels", 4), p.get("window_len", 120), None
    if kind == "synthetic-har":
        return 6, p.get("window_len", 128), p.get("n_classes", 6)
    if kind == "wesad":
        return 6, 240, 2
    return 6, 128, 6


def _resolve(cls, overrides: dict, derived: dict):
    for key, value in derived.items():
        if value is None:
            continue
        if key in overrides and overrides[key] != value:
            raise ConfigError(f"{cls.__name__}.{key}={overrides[key]} conflicts with the dataset ({value})")
        overrides[key] = value
    try:
        return cls(**overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def imputer_config(cfg: ExperimentConfig) -> ImputerConfig:
    c, w, _ = data_shape(cfg)
    return _resolve(ImputerConfig, cfg.imputer_overrides(), {"n_channels": c, "window_len": w})


def classifier_config(cfg: ExperimentConfig) -> ClassifierConfig:
    if cfg["dataset"]["kind"] not in WINDOW_KINDS:
        raise ConfigError(f"the classifier needs a labeled-window dataset ({', '.join(WINDOW_KINDS)})")
    c, w, n = data_shape(cfg)
    return _resolve(ClassifierConfig, cfg.classifier_overrides(), {"n_channels": c, "window_len": w, "n_classes": n})


# -- output plumbing ---------------------------------------------------------------


def artifact_version() -> str:
    try:
        rev = subprocess.run(
            ["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
            capture_output=True, text=True, timeout=5,
        )
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


class Run:
    """Output directory bookkeeping for one command invocation."""

    def __init__(self, command: str, cfg: ExperimentConfig | None, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.outputs: list[str] = []
        self.started = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)
        if cfg is not None:
            self.write_text("config.yaml", cfg.source_text)

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        if name not in self.outputs:
            self.outputs.append(name)
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text)
        return p

    def write_json(self, name: str, obj) -> Path:
        return self.write_text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def write_csv(self, name: str, columns, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] for c in columns])
        return self.write_text(name, buf.getvalue())

    def finish(self, status: str) -> None:
        entry = {
            "command": self.command,
            "config_hash": self.cfg.hash() if self.cfg else None,
            "seed": self.cfg.seed if self.cfg else None,
            "runs": self.cfg.runs if self.cfg else None,
            "version": artifact_version(),
            "wall_time_s": round(time.perf_counter() - self.started, 3),
            "outputs": self.outputs,
            "status": status,
        }
        with open(self.out / "run_ledger.jsonl", "a") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
            fcntl.flock(fh, fcntl.LOCK_UN)


def _num(x) -> str:
    return repr(float(x))


# -- preprocess ----------------------------------------------------------------------


def cmd_preprocess(cfg: ExperimentConfig, run: Run) -> int:
    """Write the canonical cache; files are staged and moved in only when complete."""
    data = load_data(cfg)
    cache = run.out / "cache"
    stage = Path(tempfile.mkdtemp(prefix=".cache-", dir=run.out))
    try:
        if isinstance(data, FrameData):
            save_frames_npz(data.train, stage / "frames_train.npz")
            save_frames_npz(data.test, stage / "frames_test.npz")
            names = ["frames_train.npz", "frames_test.npz"]
        else:
            with open(stage / "windows.npz", "wb") as fh:
                np.savez(fh, x=data.x, y=data.y, subjects=data.subjects.astype(str), vocab=np.array(data.vocab, dtype=str))
            names = ["windows.npz"]
        (stage / "manifest.json").write_text(json.dumps(data.manifest, indent=2, sort_keys=True, default=str) + "\n")
        names.append("manifest.json")
        if cache.exists():
            shutil.rmtree(cache)
        os.replace(stage, cache)
    finally:
        if stage.exists():
            shutil.rmtree(stage)
    run.outputs.extend(f"cache/{n}" for n in names)
    return EXIT_OK


# -- training -------------------------------------------------------------------------


def _window_stats(x: np.ndarray, names) -> ChannelStats:
    flat = np.swapaxes(x, 0, 1).reshape(x.shape[1], -1)
    return ChannelStats(list(names), flat.mean(axis=1), flat.std(axis=1))


def fit_imputer(cfg: ExperimentConfig, data, run: Run) -> TransformerImputer:
    icfg = imputer_config(cfg)
    if isinstance(data, FrameData):
        stats = ChannelStats.fit(data.train)
        std = [stats.transform(f) for f in data.train]
        segments = segments_from_frames(std, icfg.window_len, cfg["imputer"]["segment_stride"])
    else:
        x_tr, _, _ = data.part(data.train_subjects)
        stats = _window_stats(x_tr, data.channels)
        segments = np.swapaxes((x_tr - stats.mean[:, None]) / stats.std[:, None], 1, 2)
    log.info("training imputer on %d segments (%d parameters)", len(segments), imputer_analytic(icfg))
    model, hist = train_imputer(segments, icfg, seed=cfg.seed, diagnostic_dir=run.out / "diagnostics", stats=stats)
    save_imputer(model, run.path("imputer.ckpt"))
    write_loss_curve(hist.train_loss, run.path("imputer_loss.csv"))
    return model


def fit_classifier(cfg: ExperimentConfig, data: WindowData, run: Run) -> PatchClassifier:
    ccfg = classifier_config(cfg)
    x, y, s = data.part(data.train_subjects)
    log.info("training classifier with %d LOSO folds", len(set(s.tolist())))
    res = train_loso(x, y, s, ccfg, seed=cfg.seed)
    save_classifier(res.model, run.path("classifier.ckpt"))
    selected = next(f for f in res.folds if f.held_out_subject == res.selected_subject)
    write_loss_curve(selected.train_loss, run.path("classifier_loss.csv"))
    run.write_json("folds.json", {
        "folds": [f.to_dict() for f in res.folds],
        "mean_accuracy": res.mean_accuracy,
        "selected_subject": res.selected_subject,
        "labels": [str(v) for v in data.vocab],
    })
    return res.model


def _imputer_for(cfg: ExperimentConfig, data, run: Run, train: bool) -> TransformerImputer:
    ck = cfg["imputer"]["checkpoint"]
    if ck is not None:
        return load_imputer(ck)
    if not train:
        raise ConfigError("the transformer strategy needs imputer.checkpoint or --train")
    return fit_imputer(cfg, data, run)


def cmd_train(cfg: ExperimentConfig, run: Run, model: str) -> int:
    data = load_data(cfg)
    if model == "imputer":
        fit_imputer(cfg, data, run)
    else:
        if not isinstance(data, WindowData):
            raise ConfigError("the classifier needs a labeled-window dataset")
        fit_classifier(cfg, data, run)
    return EXIT_OK


def dry_run(cfg: ExperimentConfig, command: str, model: str | None) -> dict:
    info = {"command": command, "config_hash": cfg.hash(), "seed": cfg.seed, "runs": cfg.runs}
    wanted = [model] if model else []
    if command == "impute-bench" and "transformer" in cfg["bench"]["strategies"]:
        wanted.append("imputer")
    if command == "downstream":
        wanted.append("classifier")
        if "transformer" in cfg["downstream"]["strategies"]:
            wanted.append("imputer")
    for m in wanted:
        if m == "imputer":
            icfg = imputer_config(cfg)
            info["imputer"] = {
                "parameters": TransformerImputer(icfg).num_parameters(),
                "analytic": imputer_analytic(icfg), "reported": IMPUTER_REPORTED_COUNT,
            }
        else:
            ccfg = classifier_config(cfg)
            info["classifier"] = {
                "parameters": PatchClassifier(ccfg).num_parameters(),
                "analytic": classifier_analytic(ccfg), "reported": CLASSIFIER_REPORTED_COUNT,
            }
    return info


# -- reports ------------------------------------------------------------------------------


def _report_row(experiment: str, r: MetricsReport) -> dict:
    row = r.as_row()
    row["experiment"] = experiment
    for m in METRICS:
        row[m] = _num(row[m])
    row["degenerate"] = int(r.degenerate)
    return row


def _read_runs(path: Path) -> dict[str, list[MetricsReport]]:
    out: dict[str, list[MetricsReport]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["experiment"], []).append(MetricsReport(
                row["strategy"], row["group"], int(row["seed"]), float(row["mae"]), float(row["rmse"]),
                float(row["pearson"]), float(row["spearman"]), int(row["n_points"]), bool(int(row["degenerate"])),
            ))
    return out


def _summaries(reports: list[MetricsReport]) -> dict[tuple[str, str], dict[str, Summary | float]]:
    """Like :func:`aggregate`, but a single run yields its value without a spread."""
    try:
        return aggregate(reports)
    except ValueError:
        groups: dict[tuple[str, str], list[MetricsReport]] = {}
        for r in reports:
            groups.setdefault((r.strategy, r.group), []).append(r)
        out = {}
        for key in sorted(groups):
            vals = {m: [getattr(r, m) for r in groups[key]] for m in METRICS}
            out[key] = {m: summarize(v) if len(v) > 1 else Summary(float(v[0]), float("nan"), 1) for m, v in vals.items()}
        return out


def _cell(s: Summary) -> str:
    return s.format() if s.n > 1 else f"{s.mean:.2f}"


def write_tables(run: Run, runs_by_experiment: dict[str, list[MetricsReport]], group_order: dict[str, list]) -> None:
    for experiment, reports in sorted(runs_by_experiment.items()):
        name = TABLE_FILES[experiment]
        summ = _summaries(reports)
        order = group_order.get(experiment) or sorted({g for _, g in summ})
        strategies = sorted({s for s, _ in summ})
        rows, records = [], []
        for g in order:
            for s in strategies:
                if (s, g) not in summ:
                    continue
                m = summ[(s, g)]
                rows.append({"group": g, "strategy": s, "runs": m["mae"].n, **{k: _cell(m[k]) for k in METRICS}})
                records.append({
                    "group": g, "strategy": s, "runs": m["mae"].n,
                    **{k: {"mean": m[k].mean, "std": None if m[k].n < 2 else m[k].std} for k in METRICS},
                })
        run.write_csv(f"{name}.csv", REPORT_COLUMNS, rows)
        run.write_json(f"{name}.json", {"experiment": experiment, "columns": list(REPORT_COLUMNS), "rows": records})


def _failures_json(failures: list[tuple[str, Failure]]) -> list[dict]:
    return [{"experiment": e, "strategy": f.strategy, "seed": f.seed, "message": f.message} for e, f in failures]


def cmd_impute_bench(cfg: ExperimentConfig, run: Run, train: bool) -> int:
    b = cfg["bench"]
    data = load_data(cfg)
    if not data.test:
        raise ConfigError("the dataset split has no test subjects to benchmark on")
    strategies = list(b["strategies"])
    model = _imputer_for(cfg, data, run, train) if "transformer" in strategies else None
    stats = model.stats if model is not None and model.stats is not None else ChannelStats.fit(data.train)
    frames = [stats.transform(f) for f in data.test]
    classes = LengthClasses(**{k: tuple(v) for k, v in b["length_classes"].items()})
    results: dict[str, BenchResult] = {}
    for experiment in b["experiments"]:
        log.info("running %s benchmark over %d runs", experiment, cfg.runs)
        if experiment == "sources":
            results[experiment] = source_benchmark(
                frames, strategies, model, cfg.runs, cfg.seed, b["ratio"], tuple(b["gap_length_range"]), classes,
                b["pattern"],
            )
        elif experiment == "lengths":
            results[experiment] = length_benchmark(
                frames, strategies, model, cfg.runs, cfg.seed, dict(b["gaps_per_channel"]), classes, b["pattern"]
            )
        else:
            results[experiment] = segment_benchmark(frames, strategies, model, cfg.runs, cfg.seed, b["segment_class"], classes)
    rows = [_report_row(e, r) for e, res in results.items() for r in res.reports]
    run.write_csv("runs.csv", RUN_COLUMNS, rows)
    order = {"sources": list(frames[0].channel_names), "lengths": ["S", "M", "L"]}
    write_tables(run, {e: res.reports for e, res in results.items() if res.reports}, order)
    failures = [(e, f) for e, res in results.items() for f in res.failures]
    if failures:
        run.write_json("failures.json", _failures_json(failures))
        return EXIT_PARTIAL
    return EXIT_OK


def _downstream_summary(rows: list[DownstreamRow]) -> list[dict]:
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault((r.task, r.strategy, r.rate), []).append(r.accuracy)
    out = []
    for (task, strategy, rate), accs in sorted(groups.items()):
        s = summarize(accs) if len(accs) > 1 else Summary(float(accs[0]), float("nan"), 1)
        out.append({
            "task": task, "strategy": strategy, "rate": _num(rate), "accuracy": _cell(s),
            "mean": _num(s.mean), "std": "" if s.n < 2 else _num(s.std), "runs": s.n,
        })
    return out


def _downstream_rows_csv(rows: list[DownstreamRow]) -> list[dict]:
    return [
        {"task": r.task, "strategy": r.strategy, "rate": _num(r.rate), "accuracy": _num(r.accuracy), "seed": r.seed}
        for r in rows
    ]


def _read_downstream(path: Path) -> list[DownstreamRow]:
    with open(path, newline="") as fh:
        return [
            DownstreamRow(r["task"], r["strategy"], float(r["rate"]), float(r["accuracy"]), int(r["seed"]))
            for r in csv.DictReader(fh)
        ]


def cmd_downstream(cfg: ExperimentConfig, run: Run, train: bool) -> int:
    d = cfg["downstream"]
    data = load_data(cfg)
    if not data.test_subjects:
        raise ConfigError("the dataset split has no test subjects for the downstream grid")
    ck = cfg["classifier"]["checkpoint"]
    if ck is not None:
        classifier = load_classifier(ck)
    elif train:
        classifier = fit_classifier(cfg, data, run)
    else:
        raise ConfigError("downstream needs classifier.checkpoint or --train")
    strategies = list(d["strategies"])
    imputer = _imputer_for(cfg, data, run, train) if "transformer" in strategies else None
    x, y, _ = data.part(data.test_subjects)
    failures: list[Failure] = []
    rows = downstream_grid(
        classifier, x, y, imputer, cfg.runs, cfg.seed, d["task"], strategies, [float(r) for r in d["rates"]],
        tuple(d["gap_length_range"]), failures,
    )
    run.write_csv("downstream.csv", DOWNSTREAM_COLUMNS, _downstream_rows_csv(rows))
    run.write_csv("downstream_summary.csv", SUMMARY_COLUMNS, _downstream_summary(rows))
    if failures:
        run.write_json("failures.json", _failures_json([("downstream", f) for f in failures]))
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_report(run: Run) -> int:
    """Rebuild the summary tables from the per-run files already in ``--out``."""
    found = False
    runs_csv = run.out / "runs.csv"
    if runs_csv.exists():
        found = True
        by_exp = _read_runs(runs_csv)
        order = {"lengths": ["S", "M", "L"]}
        if "sources" in by_exp:
            seen: dict[str, None] = {}
            for r in by_exp["sources"]:
                seen.setdefault(r.group)
            order["sources"] = list(seen)
        write_tables(run, by_exp, order)
    down_csv = run.out / "downstream.csv"
    if down_csv.exists():
        found = True
        run.write_csv("downstream_summary.csv", SUMMARY_COLUMNS, _downstream_summary(_read_downstream(down_csv)))
    if not found:
        raise ConfigError(f"{run.out} holds no runs.csv or downstream.csv to report on")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------------------


def preflight(cfg: ExperimentConfig, args) -> None:
    """Checks that need the command line as well as the config; nothing is written yet."""
    train = getattr(args, "train", False) or args.dry_run
    if args.command == "train":
        imputer_config(cfg) if args.model == "imputer" else classifier_config(cfg)
    elif args.command == "impute-bench":
        if cfg["dataset"]["kind"] not in FRAME_KINDS:
            raise ConfigError(f"impute-bench needs a frame dataset ({', '.join(FRAME_KINDS)})")
        if "transformer" in cfg["bench"]["strategies"]:
            imputer_config(cfg)
            if cfg["imputer"]["checkpoint"] is None and not train:
                raise ConfigError("the transformer strategy needs imputer.checkpoint or --train")
    elif args.command == "downstream":
        classifier_config(cfg)
        if cfg["classifier"]["checkpoint"] is None and not train:
            raise ConfigError("downstream needs classifier.checkpoint or --train")
        if "transformer" in cfg["downstream"]["strategies"]:
            imputer_config(cfg)
            if cfg["imputer"]["checkpoint"] is None and not train:
                raise ConfigError("the transformer strategy needs imputer.checkpoint or --train")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wearimpute", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", type=Path, required=config_required, help="YAML experiment config")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--runs", type=int, help="override the number of mask seeds")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--dry-run", action="store_true", help="validate the config and exit without writing")
        return p

    common(sub.add_parser("preprocess", help="run the dataset pipeline and cache frames or windows"))
    t = common(sub.add_parser("train", help="train the imputer or the classifier"))
    t.add_argument("--model", choices=("imputer", "classifier"), required=True)
    for name, text in (("impute-bench", "per-source and per-gap-length tables"), ("downstream", "accuracy grid")):
        p = common(sub.add_parser(name, help=text))
        p.add_argument("--train", action="store_true", help="train missing models instead of loading checkpoints")
    common(sub.add_parser("report", help="rebuild summary tables from per-run files"), config_required=False)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = None
        if args.config is not None:
            cfg = load_config(args.config).with_overrides(args.seed, args.runs)
            preflight(cfg, args)
        if args.dry_run:
            if cfg is not None:
                print(json.dumps(dry_run(cfg, args.command, getattr(args, "model", None)), indent=2, sort_keys=True))
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    run = Run(args.command, cfg, args.out)
    status, code = "ok", EXIT_OK
    try:
        if args.command == "preprocess":
            code = cmd_preprocess(cfg, run)
        elif args.command == "train":
            code = cmd_train(cfg, run, args.model)
        elif args.command == "impute-bench":
            code = cmd_impute_bench(cfg, run, args.train)
        elif args.command == "downstream":
            code = cmd_downstream(cfg, run, args.train)
        else:
            code = cmd_report(run)
        if code == EXIT_PARTIAL:
            status = "partial"
    except (ConfigError, SchemaError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        status, code = "config-error", EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        status, code = "diverged", EXIT_PARTIAL
    run.finish(status)
    return code


if __name__ == "__main__":
    sys.exit(main())
