"""Command-line entry point: ``dktgen <command> ...``.

Every command accepts ``--config FILE`` plus any config field as a dotted flag,
for example ``--dkt.hidden_size 32`` or ``--seeds [0,1]``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import (
    Vocabulary,
    bundled_mastery_params,
    load_interactions,
    read_canonical,
    simulate_students,
    write_interactions,
)
from .metrics import MetricsReport, render_table
from .pipeline import (
    ExperimentConfig,
    apply_overrides,
    augment,
    canonical_json,
    config_keys,
    evaluate_checkpoint,
    file_sha256,
    resolve_output_dir,
    run_experiment,
    sweep,
    train_dkt_arm,
    write_split,
)
from .tabddpm import load_generator, save_generator, tabddpm_sample, tabddpm_train

log = logging.getLogger("dktgen")


def _split_overrides(extra: list[str]) -> list[tuple[str, str]]:
    pairs, i = [], 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ValueError(f"unexpected argument {tok!r}")
        if "=" in tok:
            key, val = tok[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ValueError(f"flag {tok} needs a value")
            key, val = tok[2:], extra[i + 1]
            i += 2
        pairs.append((key, val))
    return pairs


def build_config(args, extra: list[str]) -> ExperimentConfig:
    base = ExperimentConfig.load(args.config).to_dict() if args.config else ExperimentConfig().to_dict()
    pairs = _split_overrides(extra)
    valid = set(config_keys(base))
    for key, _ in pairs:
        if key not in valid:
            raise ValueError(f"unknown option --{key}")
    return ExperimentConfig.from_dict(apply_overrides(base, pairs))


def _print_json(obj) -> None:
    sys.stdout.write(canonical_json(obj))


# --- commands ------------------------------------------------------------------------


def cmd_ingest(args, cfg: ExperimentConfig) -> int:
    res = load_interactions(args.data, cfg.columns)
    write_interactions(res.interactions, args.out)
    _print_json(res.summary())
    return 0


def cmd_simulate(args, cfg: ExperimentConfig) -> int:
    params = bundled_mastery_params(args.skills, seed=args.param_seed)
    df = simulate_students(args.students, args.skills, params, args.steps, args.seed)
    write_interactions(df, args.out)
    _print_json({"interactions": len(df), "students": args.students, "skills": args.skills})
    return 0


def cmd_split(args, cfg: ExperimentConfig) -> int:
    summary = write_split(read_canonical(args.data), cfg.split, resolve_output_dir(args.out_dir))
    _print_json(summary)
    return 0


def cmd_train_dkt(args, cfg: ExperimentConfig) -> int:
    train, valid = read_canonical(args.train), read_canonical(args.valid)
    skills = Vocabulary.skills_from(read_canonical(args.vocab_from) if args.vocab_from else train)
    _, tlog = train_dkt_arm(train, valid, skills, cfg.dkt, Path(args.out))
    _print_json({"best_epoch": tlog.best_epoch, "best_valid_auc": tlog.best_valid_auc, "epochs": len(tlog.epochs)})
    return 0


def cmd_train_gen(args, cfg: ExperimentConfig) -> int:
    gen = tabddpm_train(read_canonical(args.train), cfg.generator)
    sha = save_generator(args.out, gen)
    _print_json({"sha256": sha, "final_loss": gen.loss_curve[-1] if gen.loss_curve else None})
    return 0


def cmd_generate(args, cfg: ExperimentConfig) -> int:
    gen = load_generator(args.generator)
    df = tabddpm_sample(gen, args.n, args.seed)
    write_interactions(df, args.out)
    sidecar = {"n": args.n, "seed": args.seed, "generator_sha256": file_sha256(args.generator)}
    Path(str(args.out) + ".json").write_text(canonical_json(sidecar))
    _print_json(sidecar)
    return 0


def cmd_augment(args, cfg: ExperimentConfig) -> int:
    combined = augment(read_canonical(args.train), read_canonical(args.synthetic))
    write_interactions(combined, args.out)
    _print_json({"interactions": len(combined)})
    return 0


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    m = evaluate_checkpoint(Path(args.checkpoint), read_canonical(args.test), cfg.threshold)
    doc = {"metrics": m.values(), "undefined": m.undefined}
    if args.out:
        Path(args.out).write_text(canonical_json(doc))
    _print_json(doc)
    return 0


def cmd_run(args, cfg: ExperimentConfig) -> int:
    res = run_experiment(cfg, workers=args.workers)
    print((res.out_dir / "table.txt").read_text(), end="")
    if not res.complete:
        log.error("incomplete seeds: %s", res.metrics["incomplete_seeds"])
    return 0 if res.complete else 1


def cmd_sweep(args, cfg: ExperimentConfig) -> int:
    res = sweep(cfg, workers=args.workers)
    print((res.out_dir / "sweep_table.txt").read_text(), end="")
    if not res.complete:
        log.error("incomplete seeds: %s", res.metrics["incomplete_seeds"])
    return 0 if res.complete else 1


def cmd_report(args, cfg: ExperimentConfig) -> int:
    doc = json.loads(Path(args.metrics).read_text())
    reports = doc["reports"]
    if "sample_counts" in doc:
        rows = [(f"{int(k):,}", reports[k]) for k in sorted(reports, key=int)]
    else:
        rows = [("DKT", reports.get("baseline")), ("DKT + TabDDPM", reports.get("augmented"))]
    rows = [(name, MetricsReport.from_dict(r)) for name, r in rows if r is not None]
    print(render_table(rows) if rows else "no completed seeds")
    if doc.get("incomplete_seeds"):
        print(f"incomplete seeds: {', '.join(sorted(doc['incomplete_seeds']))}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dktgen", description=__doc__.splitlines()[0], allow_abbrev=False)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, allow_abbrev=False)
        sp.add_argument("--config", help="JSON experiment config")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("ingest", cmd_ingest, "load a raw log, drop invalid rows and duplicates")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)

    sp = add("simulate", cmd_simulate, "write a two-state mastery simulator corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--students", type=int, default=500)
    sp.add_argument("--skills", type=int, default=20)
    sp.add_argument("--steps", type=int, default=100)
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--param-seed", type=int, default=20240101)

    sp = add("split", cmd_split, "student-level train/valid/test split")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out-dir", required=True)

    sp = add("train-dkt", cmd_train_dkt, "train DKT with early stopping")
    sp.add_argument("--train", required=True)
    sp.add_argument("--valid", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--vocab-from", help="build the skill vocabulary from this file instead of --train")

    sp = add("train-gen", cmd_train_gen, "train the tabular diffusion generator")
    sp.add_argument("--train", required=True)
    sp.add_argument("--out", required=True)

    sp = add("generate", cmd_generate, "sample synthetic interactions")
    sp.add_argument("--generator", required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("augment", cmd_augment, "combine real and synthetic interactions")
    sp.add_argument("--train", required=True)
    sp.add_argument("--synthetic", required=True)
    sp.add_argument("--out", required=True)

    sp = add("eval", cmd_eval, "evaluate a DKT checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--out")

    for name, fn, help_ in (
        ("run", cmd_run, "baseline vs augmented over all seeds"),
        ("sweep", cmd_sweep, "augmented arm over every sample count"),
    ):
        sp = add(name, fn, help_)
        sp.add_argument("--workers", type=int, default=1, help="parallel seed processes (default serial)")

    sp = add("report", cmd_report, "render a metrics file as a table")
    sp.add_argument("--metrics", required=True)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = build_config(args, extra)
        return args.fn(args, cfg)
    except (OSError, ValueError, RuntimeError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
