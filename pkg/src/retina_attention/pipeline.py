"""End-to-end experiment stages: load trials, train, infer, decode, classify.

Everything an experiment produces is written under one output directory, and
``manifest.json`` records the config, its hash and the three seeds so the run
can be repeated exactly.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .classifier import evaluate, split_stratified, train_mlp
from .config import DataConfig, ExperimentConfig, config_hash, to_ini
from .decoders import FeatureVector, decode, features_to_csv
from .encoder import EncoderConfig
from .events_io import (
    SYNTHETIC_KINDS,
    SensorGeometry,
    TrialSegment,
    gen_synthetic_pattern,
    load_labels,
    parse_aedat31,
    parse_csv_events,
    segment_trials,
    write_csv_events,
)
from .network import (
    LAYERS,
    NetworkState,
    NetworkTopology,
    SpikeTrace,
    build_network,
    run_trial,
    total_simulated_time,
    train_unsupervised,
)

log = logging.getLogger(__name__)

TRIAL_INDEX = "trials.csv"


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Trial:
    trial_id: str
    segment: TrialSegment


def _labels_path(aedat: Path) -> Path:
    return aedat.with_name(aedat.stem + "_labels.csv")


def _expand(paths: Iterable[str | Path], pattern: str) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.glob(pattern)))
        elif p.is_file():
            out.append(p)
        else:
            raise FileNotFoundError(f"no such file or directory: {p}")
    return out


def read_recording(path: Path, labels: Path | None, classes: Sequence[int], geometry: SensorGeometry) -> list[Trial]:
    """Segment one AEDAT or CSV recording with its label table."""
    labels = labels or _labels_path(path)
    if not labels.is_file():
        raise FileNotFoundError(f"label table not found: {labels}")
    with open(path, "rb") as f:
        if path.suffix.lower() == ".csv":
            events = parse_csv_events(f, geometry)
        else:
            _, events = parse_aedat31(f, geometry)
    with open(labels, "rb") as f:
        rows = load_labels(f)
    keep = set(classes) if classes else {r[0] for r in rows}
    segs = segment_trials(events, rows, keep)
    return [Trial(f"{path.stem}_{k:03d}", s) for k, s in enumerate(segs)]


def synthetic_trials(data: DataConfig, geometry: SensorGeometry) -> list[Trial]:
    trials = []
    for i in range(data.synthetic_per_class):
        for j, kind in enumerate(SYNTHETIC_KINDS):
            seg = gen_synthetic_pattern(kind, data.synthetic_duration_us, geometry, seed=1000 * i + j)
            trials.append(Trial(f"{kind}_{i:03d}", seg))
    return trials


def read_trial_dir(directory: Path, geometry: SensorGeometry) -> list[Trial]:
    """Read a directory produced by :func:`ingest`."""
    index = directory / TRIAL_INDEX
    if not index.is_file():
        raise FileNotFoundError(f"trial index not found: {index}")
    trials = []
    lines = index.read_text(encoding="utf-8").splitlines()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            trial_id, cls, duration = line.split(",")
            cls, duration = int(cls), int(duration)
        except ValueError:
            raise ValueError(f"malformed trial index row {line!r} ({index}, line {lineno})") from None
        with open(directory / f"{trial_id}.csv", "rb") as f:
            events = parse_csv_events(f, geometry)
        trials.append(Trial(trial_id, TrialSegment(cls, 0, duration, events)))
    return trials


def load_trials(data: DataConfig, enc: EncoderConfig) -> list[Trial]:
    geometry = enc.geometry
    if data.format == "synthetic":
        trials = synthetic_trials(data, geometry)
    elif data.format == "csv":
        trials = [t for d in data.paths for t in read_trial_dir(Path(d), geometry)]
    else:
        trials = []
        for path in _expand(data.paths, "*.aedat"):
            trials.extend(read_recording(path, None, data.classes, geometry))
    if data.classes:
        trials = [t for t in trials if t.segment.class_label in data.classes]
    if data.max_per_class:
        seen: dict[int, int] = {}
        kept = []
        for t in trials:
            n = seen.get(t.segment.class_label, 0)
            if n < data.max_per_class:
                kept.append(t)
                seen[t.segment.class_label] = n + 1
        trials = kept
    if not trials:
        raise ValueError("no trials selected")
    return trials


def ingest(event_paths: Sequence[str | Path], out_dir: str | Path, classes: Sequence[int] = (),
           labels: str | Path | None = None, geometry: SensorGeometry = SensorGeometry()) -> list[Trial]:
    """Convert recordings to one CSV per trial plus ``trials.csv``."""
    paths = [Path(p) for p in event_paths]
    for p in paths + ([Path(labels)] if labels else []):
        if not p.exists():
            raise FileNotFoundError(f"no such file or directory: {p}")
    trials = []
    for path in _expand(paths, "*.aedat"):
        trials.extend(read_recording(path, Path(labels) if labels else None, classes, geometry))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["trial_id,class,duration"]
    for t in trials:
        with open(out / f"{t.trial_id}.csv", "wb") as f:
            write_csv_events(t.segment.events, f, header=True)
        rows.append(f"{t.trial_id},{t.segment.class_label},{t.segment.duration}")
    (out / TRIAL_INDEX).write_text("\n".join(rows) + "\n", encoding="utf-8")
    return trials


def build_from_config(cfg: ExperimentConfig) -> NetworkState:
    p = cfg.network
    topo = NetworkTopology(cfg.encoder.n_inputs, p.n_intermediate, p.n_output, p.lateral_inhibition_output)
    return build_network(topo, cfg.neuron, cfg.plasticity, p, seed=cfg.training.network_seed)


_worker_net: NetworkState | None = None
_worker_enc: EncoderConfig | None = None


def _init_worker(net: NetworkState, enc: EncoderConfig) -> None:
    global _worker_net, _worker_enc
    _worker_net, _worker_enc = net, enc


def _infer_one(segment: TrialSegment) -> SpikeTrace:
    return run_trial(_worker_net.copy(), segment, _worker_enc, learning=False)[1]


def infer(net: NetworkState, segments: Sequence[TrialSegment], enc: EncoderConfig, workers: int = 1) -> list[SpikeTrace]:
    """Run every trial on its own copy of the frozen network."""
    if workers <= 1 or len(segments) < 2:
        return [run_trial(net.copy(), s, enc, learning=False)[1] for s in segments]
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(net, enc)) as pool:
        return list(pool.map(_infer_one, segments, chunksize=max(1, len(segments) // (4 * workers))))


def extract_features(trials: Sequence[Trial], traces: Sequence[SpikeTrace], coding: str, n_output: int) -> list[FeatureVector]:
    return [
        FeatureVector(coding, decode(tr, coding, n_output), t.trial_id, t.segment.class_label)
        for t, tr in zip(trials, traces)
    ]


def _write(path: Path, text: str, written: list[str], root: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    written.append(str(path.relative_to(root)))


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Execute every stage and return the manifest (also written to disk).

    A failing stage still leaves a manifest, marked ``INCOMPLETE``, naming the
    stage; the failure is re-raised as :class:`PipelineError`.
    """
    root = Path(cfg.output.directory)
    root.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    manifest = {
        "status": "INCOMPLETE",
        "failed_stage": None,
        "error": None,
        "config_hash": config_hash(cfg),
        "seeds": cfg.seeds,
        "config": to_ini(cfg),
        "stages_completed": [],
        "accuracy": {},
        "files": written,
    }
    stage = "load"
    try:
        _write(root / "config.ini", to_ini(cfg), written, root)
        trials = load_trials(cfg.data, cfg.encoder)
        manifest["n_trials"] = len(trials)
        manifest["classes"] = sorted({t.segment.class_label for t in trials})
        manifest["total_simulated_ms"] = total_simulated_time(
            [t.segment for t in trials], cfg.encoder, cfg.network) / 1000
        index = ["trial_id,class,duration"] + [f"{t.trial_id},{t.segment.class_label},{t.segment.duration}" for t in trials]
        _write(root / TRIAL_INDEX, "\n".join(index) + "\n", written, root)
        manifest["stages_completed"].append(stage)

        stage = "train"
        log.info("training on %d trials for %d epoch(s)", len(trials), cfg.training.epochs)
        net = build_from_config(cfg)
        train_unsupervised(net, [t.segment for t in trials], cfg.encoder, cfg.training.epochs, cfg.training.shuffle_seed)
        manifest["stages_completed"].append(stage)

        stage = "infer"
        traces = infer(net, [t.segment for t in trials], cfg.encoder, cfg.training.workers)
        if cfg.output.write_traces:
            for t, tr in zip(trials, traces):
                _write(root / "traces" / f"{t.trial_id}.csv", tr.to_csv(), written, root)
                _write(root / "traces" / f"{t.trial_id}_intervals.csv", tr.intervals_csv(), written, root)
        manifest["stages_completed"].append(stage)

        stage = "decode"
        features = {c: extract_features(trials, traces, c, cfg.network.n_output) for c in cfg.eval.codings}
        for coding, feats in features.items():
            _write(root / f"features_{coding}.csv", features_to_csv(feats), written, root)
        manifest["stages_completed"].append(stage)

        stage = "classify"
        hp = cfg.eval.mlp()
        for coding, feats in features.items():
            train, test = split_stratified(feats, cfg.eval.test_fraction, cfg.eval.split_seed)
            model = train_mlp(train, hp)
            report = evaluate(model, test, coding, cfg.eval.split_seed, hp)
            manifest["accuracy"][coding] = report.accuracy
            _write(root / f"report_{coding}.json", report.to_json(), written, root)
            log.info("%s accuracy %.3f", coding, report.accuracy)
        manifest["stages_completed"].append(stage)
        manifest["status"] = "COMPLETE"
    except Exception as exc:
        manifest["failed_stage"] = stage
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        raise PipelineError(stage, exc) from exc
    finally:
        (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def write_raster(trace: SpikeTrace, out_dir: str | Path) -> dict[str, int]:
    """Split a trace into ``raster_<layer>.csv`` files plus the attention intervals."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    counts = {}
    for layer in LAYERS:
        rows = trace.layer(layer)
        counts[layer] = len(rows)
        text = "t_us,neuron_id\n" + "".join(f"{t},{i}\n" for t, i in rows)
        (out / f"raster_{layer}.csv").write_text(text, encoding="utf-8")
    (out / "attention_intervals.csv").write_text(trace.intervals_csv(), encoding="utf-8")
    return counts
