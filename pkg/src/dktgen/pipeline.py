"""End-to-end experiment orchestration.

Each stage reads and writes plain files under the run directory so it can be
invoked on its own from the command line, and every stage records what it read
and wrote in a :class:`RunManifest`. Per-seed work is independent; seeds run
serially unless a worker count above one is requested.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import logging
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .data import (
    UNKNOWN_SKILL,
    ColumnMap,
    SplitSpec,
    Vocabulary,
    build_sequences,
    bundled_corpus_path,
    load_interactions,
    read_canonical,
    split_by_student,
    write_interactions,
    write_split_manifest,
)
from .dkt import DktConfig, dkt_predict, dkt_train, load_checkpoint, save_checkpoint
from .kernels import BACKEND
from .metrics import METRICS, MetricsReport, RunMetrics, aggregate_runs, evaluate, render_table
from .tabddpm import GeneratorConfig, load_generator, save_generator, tabddpm_sample, tabddpm_train

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "DKTGEN_OUTPUT_ROOT"
SYNTHETIC_PREFIX = "syn:"


# --- configuration --------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Everything that determines an experiment's numbers.

    ``data_path`` of None selects the bundled simulator corpus. The per-seed loop
    sets the seed of every stage (split, generator, sampling, DKT) to the run seed,
    so the nested ``seed`` fields only matter for standalone stage commands.
    """

    data_path: str | None = None
    columns: ColumnMap = field(default_factory=ColumnMap)
    split: SplitSpec = field(default_factory=SplitSpec)
    dkt: DktConfig = field(default_factory=DktConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    sample_counts: list[int] = field(default_factory=lambda: [10_000])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    threshold: float = 0.5
    output_dir: str = "runs/default"

    def __post_init__(self):
        self.sample_counts = [int(c) for c in self.sample_counts]
        self.seeds = [int(s) for s in self.seeds]
        if any(c < 0 for c in self.sample_counts):
            raise ValueError(f"sample_counts must be non-negative, got {self.sample_counts}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError(f"seeds must be distinct, got {self.seeds}")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        nested = {"columns": ColumnMap, "split": SplitSpec, "dkt": DktConfig, "generator": GeneratorConfig}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        for name, typ in nested.items():
            if name in d and isinstance(d[name], dict):
                sub_known = {f.name for f in dataclasses.fields(typ)}
                bad = set(d[name]) - sub_known
                if bad:
                    raise ValueError(f"unknown {name} fields: {sorted(bad)}")
                d[name] = typ(**d[name])
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()

    def run_dir(self) -> Path:
        return resolve_output_dir(self.output_dir)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config: dict, overrides: Sequence[tuple[str, str]]) -> dict:
    """Set dotted keys, e.g. ``("dkt.hidden_size", "32")``, in a copy of ``config``.

    Values are parsed as JSON when possible (numbers, lists, null) and kept as
    strings otherwise.
    """
    out = copy.deepcopy(config)
    for key, raw in overrides:
        parts = key.split(".")
        node = out
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ValueError(f"unknown config section {p!r} in {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ValueError(f"unknown config field {key!r}")
        node[parts[-1]] = _parse_value(raw)
    return out


def config_keys(config: dict, prefix: str = "") -> list[str]:
    """All dotted leaf names of a config dictionary."""
    keys = []
    for k, v in config.items():
        name = f"{prefix}{k}"
        if isinstance(v, dict):
            keys.extend(config_keys(v, name + "."))
        else:
            keys.append(name)
    return keys


def resolve_output_dir(path: str | Path) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --- provenance -------------------------------------------------------------------


@dataclass
class StageRecord:
    seed: int | None
    stage: str
    reads: list[str]
    writes: list[str]
    seconds: float
    extra: dict = field(default_factory=dict)


@dataclass
class RunManifest:
    config_hash: str
    input_files: dict[str, str]
    versions: dict[str, str]
    stages: list[StageRecord] = field(default_factory=list)

    def record(self, seed, stage, reads=(), writes=(), seconds=0.0, **extra) -> StageRecord:
        rec = StageRecord(seed, stage, [str(p) for p in reads], [str(p) for p in writes], float(seconds), extra)
        self.stages.append(rec)
        return rec

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        stages = [StageRecord(**s) for s in d.get("stages", [])]
        return cls(d["config_hash"], dict(d["input_files"]), dict(d["versions"]), stages)

    def write(self, path: str | Path) -> None:
        missing = [p for s in self.stages for p in s.writes if not Path(p).exists()]
        if missing:
            raise FileNotFoundError(f"manifest references missing files: {missing[:3]}")
        Path(path).write_text(canonical_json(self.to_dict()))

    def stages_named(self, stage: str) -> list[StageRecord]:
        return [s for s in self.stages if s.stage == stage]


TRAINING_STAGES = ("train-gen", "generate", "augment", "train-dkt")


def audit_manifest(manifest: RunManifest) -> list[str]:
    """Leakage and isolation problems recorded in ``manifest``; empty when clean."""
    problems = []
    for s in manifest.stages:
        if s.stage in TRAINING_STAGES and any(Path(p).name == "test.csv" for p in s.reads):
            problems.append(f"seed {s.seed}: {s.stage} read the test split")
        if s.stage == "train-dkt" and s.extra.get("arm") == "baseline":
            if any(Path(p).name.startswith(("generator", "synthetic", "combined")) for p in s.reads):
                problems.append(f"seed {s.seed}: baseline DKT read generator output")
    return problems


def artifact_versions() -> dict[str, str]:
    return {
        "dktgen": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "python": platform.python_version(),
        "rnn_backend": BACKEND,
    }


# --- stages ----------------------------------------------------------------------------


def augment(train: pd.DataFrame, synthetic: pd.DataFrame) -> pd.DataFrame:
    """Real rows followed by synthetic rows, with synthetic users moved to their own namespace.

    Synthetic user ids get the ``syn:`` prefix. Should a real id already start with
    the prefix, the prefix is doubled until it is unused, so the two sets of users
    never share an id. Row order within each source is kept.
    """
    if len(synthetic) == 0:
        return train.reset_index(drop=True).copy()
    real_users = set(train["user_id"].astype(str))
    prefix = SYNTHETIC_PREFIX
    while any(u.startswith(prefix) for u in real_users):
        prefix = SYNTHETIC_PREFIX + prefix
    syn = synthetic.assign(user_id=prefix + synthetic["user_id"].astype(str))
    return pd.concat([train, syn], ignore_index=True)


def load_corpus(config: ExperimentConfig) -> tuple[pd.DataFrame, Path]:
    path = Path(config.data_path) if config.data_path else bundled_corpus_path()
    result = load_interactions(path, config.columns)
    log.info("loaded %s", result.summary())
    return result.interactions, path


@dataclass
class SeedPaths:
    root: Path

    @property
    def train(self) -> Path:
        return self.root / "train.csv"

    @property
    def valid(self) -> Path:
        return self.root / "valid.csv"

    @property
    def test(self) -> Path:
        return self.root / "test.csv"

    @property
    def generator(self) -> Path:
        return self.root / "generator.json"

    def synthetic(self, n: int) -> Path:
        return self.root / f"synthetic_{n}.csv"

    def dkt(self, arm: str) -> Path:
        return self.root / f"dkt_{arm}.json"


def write_split(df: pd.DataFrame, spec: SplitSpec, out_dir: Path) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    parts = split_by_student(df, spec)
    for name, part in zip(("train", "valid", "test"), parts):
        write_interactions(part, out_dir / f"{name}.csv")
    return write_split_manifest(out_dir, parts, spec, num_skills=len(Vocabulary.skills_from(parts[0])))


def train_dkt_arm(train: pd.DataFrame, valid: pd.DataFrame, skills: Vocabulary, config: DktConfig, out: Path):
    params, tlog = dkt_train(build_sequences(train, skills), build_sequences(valid, skills), len(skills), config)
    save_checkpoint(out, params, config, skills.tokens, tlog)
    return params, tlog


def evaluate_checkpoint(path: Path, test: pd.DataFrame, threshold: float) -> RunMetrics:
    params, config, tokens = load_checkpoint(path)
    skills = Vocabulary(tokens, unknown=UNKNOWN_SKILL if tokens and tokens[-1] == UNKNOWN_SKILL else None)
    preds = dkt_predict(params, build_sequences(test, skills), len(skills), config.max_len)
    return evaluate(preds.label, preds.probability, threshold)


def _with_seed(cfg, seed):
    return dataclasses.replace(cfg, seed=seed)


def _seed_worker(job: dict) -> dict:
    """Runs one seed of a run or sweep; returns metrics, stage records and any failure."""
    config = ExperimentConfig.from_dict(job["config"])
    seed, counts, with_baseline = job["seed"], job["counts"], job["baseline"]
    manifest = RunManifest("", {}, {})
    out = {"seed": seed, "metrics": {}, "epochs": {}, "generator_sha256": None, "error": None}
    try:
        df = job.get("frame")
        if df is None:
            df, _ = load_corpus(config)
        paths = SeedPaths(config.run_dir() / f"seed_{seed}")
        t = time.perf_counter()
        write_split(df, _with_seed(config.split, seed), paths.root)
        manifest.record(
            seed, "split", [job["data_path"]],
            [paths.train, paths.valid, paths.test, paths.root / "split_summary.json"],
            time.perf_counter() - t,
        )
        train, valid, test = (read_canonical(p) for p in (paths.train, paths.valid, paths.test))
        skills = Vocabulary.skills_from(train)
        dkt_cfg = _with_seed(config.dkt, seed)

        if with_baseline:
            t = time.perf_counter()
            _, tlog = train_dkt_arm(train, valid, skills, dkt_cfg, paths.dkt("baseline"))
            manifest.record(seed, "train-dkt", [paths.train, paths.valid], [paths.dkt("baseline")],
                            time.perf_counter() - t, arm="baseline")
            t = time.perf_counter()
            out["metrics"]["baseline"] = evaluate_checkpoint(paths.dkt("baseline"), test, config.threshold).values()
            out["epochs"]["baseline"] = tlog.best_epoch
            manifest.record(seed, "eval", [paths.dkt("baseline"), paths.test], [], time.perf_counter() - t,
                            arm="baseline")

        n_max = max(counts)
        gen_sha = None
        synthetic = None
        if n_max > 0:
            t = time.perf_counter()
            gen = tabddpm_train(train, _with_seed(config.generator, seed))
            gen_sha = save_generator(paths.generator, gen)
            out["generator_sha256"] = gen_sha
            manifest.record(seed, "train-gen", [paths.train], [paths.generator], time.perf_counter() - t,
                            sha256=gen_sha)
            t = time.perf_counter()
            # one draw of the largest count; smaller counts are its prefixes, which is
            # what an independent draw of that count returns
            synthetic = tabddpm_sample(load_generator(paths.generator), n_max, seed)
            write_interactions(synthetic, paths.synthetic(n_max))
            manifest.record(seed, "generate", [paths.generator], [paths.synthetic(n_max)],
                            time.perf_counter() - t, n=n_max, generator_sha256=gen_sha)

        for n in counts:
            arm = f"augmented_{n}"
            t = time.perf_counter()
            combined = augment(train, synthetic.iloc[:n] if n > 0 else train.iloc[:0])
            reads = [paths.train] + ([paths.synthetic(n_max), paths.generator] if n > 0 else [])
            _, tlog = train_dkt_arm(combined, valid, skills, dkt_cfg, paths.dkt(arm))
            manifest.record(seed, "train-dkt", reads + [paths.valid], [paths.dkt(arm)], time.perf_counter() - t,
                            arm=arm, n=n, generator_sha256=gen_sha if n > 0 else None)
            t = time.perf_counter()
            out["metrics"][arm] = evaluate_checkpoint(paths.dkt(arm), test, config.threshold).values()
            out["epochs"][arm] = tlog.best_epoch
            manifest.record(seed, "eval", [paths.dkt(arm), paths.test], [], time.perf_counter() - t, arm=arm)
    except Exception as exc:  # the seed is abandoned, the others continue
        log.error("seed %d failed: %s: %s", seed, type(exc).__name__, exc)
        out["error"] = f"{type(exc).__name__}: {exc}"
    out["stages"] = [asdict(s) for s in manifest.stages]
    return out


def _run_seeds(config: ExperimentConfig, counts: list[int], baseline: bool, workers: int):
    df, data_path = load_corpus(config)
    manifest = RunManifest(config.config_hash(), {str(data_path): file_sha256(data_path)}, artifact_versions())
    jobs = [
        {"config": config.to_dict(), "seed": s, "counts": counts, "baseline": baseline, "data_path": str(data_path)}
        for s in config.seeds
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_seed_worker, jobs))
    else:
        results = [_seed_worker(dict(j, frame=df)) for j in jobs]
    for r in results:
        manifest.stages.extend(StageRecord(**s) for s in r.pop("stages"))
    return results, manifest


def _aggregate(results: list[dict], arm: str, threshold: float) -> MetricsReport | None:
    runs = [RunMetrics(**r["metrics"][arm]) for r in results if r["error"] is None]
    return aggregate_runs(runs, threshold) if runs else None


def _metrics_doc(config: ExperimentConfig, results: list[dict], arms: dict[str, str]) -> dict:
    done = [r for r in results if r["error"] is None]
    doc = {
        "seeds": list(config.seeds),
        "completed_seeds": [r["seed"] for r in done],
        "incomplete_seeds": {str(r["seed"]): r["error"] for r in results if r["error"] is not None},
        "threshold": config.threshold,
        "reports": {},
        "per_seed": {
            str(r["seed"]): {"metrics": r["metrics"], "best_epoch": r["epochs"], "generator_sha256": r["generator_sha256"]}
            for r in done
        },
    }
    for label, arm in arms.items():
        rep = _aggregate(results, arm, config.threshold)
        doc["reports"][label] = rep.to_dict() if rep is not None else None
    return doc


@dataclass
class ExperimentResult:
    baseline: MetricsReport | None
    augmented: MetricsReport | None
    manifest: RunManifest
    metrics: dict
    out_dir: Path

    @property
    def complete(self) -> bool:
        return not self.metrics["incomplete_seeds"]


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Baseline and augmented DKT for every seed, aggregated over completed seeds.

    The augmented arm uses the largest entry of ``config.sample_counts``. Writes
    ``metrics.json`` (deterministic, no timings), ``table.txt`` and ``manifest.json``
    to the run directory.
    """
    out_dir = config.run_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    n = max(config.sample_counts)
    results, manifest = _run_seeds(config, [n], baseline=True, workers=workers)
    doc = _metrics_doc(config, results, {"baseline": "baseline", "augmented": f"augmented_{n}"})
    doc["sample_count"] = n
    (out_dir / "metrics.json").write_text(canonical_json(doc))
    baseline = MetricsReport.from_dict(doc["reports"]["baseline"]) if doc["reports"]["baseline"] else None
    augmented = MetricsReport.from_dict(doc["reports"]["augmented"]) if doc["reports"]["augmented"] else None
    rows = [(name, rep) for name, rep in (("DKT", baseline), ("DKT + TabDDPM", augmented)) if rep is not None]
    (out_dir / "table.txt").write_text((render_table(rows) if rows else "no completed seeds") + "\n")
    manifest.write(out_dir / "manifest.json")
    return ExperimentResult(baseline, augmented, manifest, doc, out_dir)


@dataclass
class SweepResult:
    reports: dict[int, MetricsReport]
    manifest: RunManifest
    metrics: dict
    plot_path: Path
    out_dir: Path

    @property
    def complete(self) -> bool:
        return not self.metrics["incomplete_seeds"]


def plot_rows(reports: dict[int, MetricsReport]) -> pd.DataFrame:
    """Long format: one row per (count, metric)."""
    rows = []
    for n, rep in sorted(reports.items()):
        for m in METRICS:
            s = getattr(rep, m)
            rows.append({"count": n, "metric": m, "mean": s.mean, "std": s.std})
    return pd.DataFrame(rows, columns=["count", "metric", "mean", "std"])


def sweep(config: ExperimentConfig, workers: int = 1) -> SweepResult:
    """Augmented arm at every sample count, one trained generator per seed.

    Writes ``sweep_metrics.json``, ``sweep_table.txt``, ``plot_data.csv`` and
    ``manifest.json`` to the run directory.
    """
    counts = sorted(set(config.sample_counts))
    if not counts:
        raise ValueError("sweep needs at least one sample count")
    out_dir = config.run_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    results, manifest = _run_seeds(config, counts, baseline=False, workers=workers)
    doc = _metrics_doc(config, results, {str(n): f"augmented_{n}" for n in counts})
    doc["sample_counts"] = counts
    (out_dir / "sweep_metrics.json").write_text(canonical_json(doc))
    reports = {n: MetricsReport.from_dict(doc["reports"][str(n)]) for n in counts if doc["reports"][str(n)]}
    plot_path = out_dir / "plot_data.csv"
    plot_rows(reports).to_csv(plot_path, index=False, float_format="%.6f")
    table = render_table([(f"{n:,}", rep) for n, rep in reports.items()]) if reports else "no completed seeds"
    (out_dir / "sweep_table.txt").write_text(table + "\n")
    manifest.write(out_dir / "manifest.json")
    return SweepResult(reports, manifest, doc, plot_path, out_dir)
