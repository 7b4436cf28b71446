"""Command-line pipeline.

::

    cohortparity synth     --out run      # run/data.jsonl
    cohortparity train-lm  --out run      # run/lm_model.bin, embeddings.txt, lm_history.csv
    cohortparity cluster   --out run      # run/cohorts_implicit.csv, user_clusters.csv
    cohortparity train     --out run      # run/classifier.bin, history.csv
    cohortparity eval      --out run      # run/report.csv, report.json, report.md
    cohortparity sweep     --out run      # run/sweep_summary.csv

Outputs are overwritten unless ``--no-clobber`` is given. Exit status is 0 on
success, 2 for configuration or usage errors and 1 for any other failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import cohorts as co
from . import evaluate as ev
from . import model as clf
from .cluster import assignment_from_clusters, cluster_users
from .config import RunConfig, apply_overrides, load_config
from .data import ConfigError, DataFormatError, Dataset, SchemaError, generate_synthetic
from .data import load_jsonl, split_indices, write_jsonl
from .trainer import TrainingError, train
from .userlm import read_embeddings, save_lm, train_lm, user_embeddings, write_embeddings

logger = logging.getLogger("cohortparity")

DATA_FILE = "data.jsonl"
LM_FILE = "lm_model.bin"
EMBED_FILE = "embeddings.txt"
LM_HISTORY_FILE = "lm_history.csv"
IMPLICIT_FILE = "cohorts_implicit.csv"
USER_CLUSTER_FILE = "user_clusters.csv"
CHECKPOINT_FILE = "classifier.bin"
HISTORY_FILE = "history.csv"
REPORT_STEM = "report"
SUMMARY_FILE = "sweep_summary.csv"
REPORT_SUFFIX = {"csv": ".csv", "json": ".json", "markdown": ".md"}


class CLIError(RuntimeError):
    """A failure reported to the user with exit status 1."""


class Run:
    """Resolved configuration plus output-directory helpers."""

    def __init__(self, config: RunConfig, no_clobber: bool = False):
        self.config = config
        self.out = Path(config.paths.out)
        self.no_clobber = no_clobber

    def path(self, name: str) -> Path:
        return self.out / name

    def claim(self, *names: str) -> list[Path]:
        """Output paths for this command; refuses existing files under no-clobber."""
        paths = [self.path(n) for n in names]
        if self.no_clobber:
            existing = [str(p) for p in paths if p.exists()]
            if existing:
                raise CLIError(f"refusing to overwrite (--no-clobber): {', '.join(existing)}")
        self.out.mkdir(parents=True, exist_ok=True)
        return paths

    def data_path(self) -> Path:
        return Path(self.config.data.path) if self.config.data.path else self.path(DATA_FILE)

    def dataset(self) -> Dataset:
        path = self.data_path()
        if not path.exists():
            raise CLIError(f"data file not found: {path}")
        dataset = load_jsonl(path, num_classes=None)
        if len(dataset) == 0:
            raise CLIError(f"{path}: no examples")
        return dataset

    def split(self, dataset: Dataset):
        return split_indices(dataset, self.config.data.test_fraction, self.config.data.split_seed)


# ---------------------------------------------------------------------------
# cohort sources


def resolve_cohorts(source: str, dataset: Dataset, out: Path) -> co.CohortAssignment:
    """Build a cohort assignment over ``dataset`` from a source string."""
    parts = [p.strip() for p in source.split("+")]
    if not all(parts):
        raise ConfigError(f"bad cohort source {source!r}")
    result = None
    for part in parts:
        current = _resolve_one(part, dataset, out)
        result = current if result is None else co.combine(result, current)
    return result


def _resolve_one(part: str, dataset: Dataset, out: Path) -> co.CohortAssignment:
    kind, _, rest = part.partition(":")
    if kind == "attr" and rest:
        return co.derive_categorical(dataset, rest)
    if kind == "threshold":
        attr, _, t = rest.rpartition(":")
        try:
            value = float(t)
        except ValueError:
            raise ConfigError(f"threshold source {part!r} needs threshold:ATTR:T") from None
        if not attr:
            raise ConfigError(f"threshold source {part!r} needs threshold:ATTR:T")
        return co.derive_threshold(dataset, co.ThresholdSpec(attr, value))
    if kind in ("implicit", "csv"):
        path = out / IMPLICIT_FILE if kind == "implicit" else Path(rest)
        if kind == "csv" and not rest:
            raise ConfigError("csv cohort source needs a path: csv:PATH")
        if not path.exists():
            raise CLIError(f"cohort file not found: {path}")
        assignment = co.read_csv(path, name="implicit" if kind == "implicit" else None)
        if len(assignment) != len(dataset):
            raise CLIError(f"{path}: covers {len(assignment)} examples, dataset has {len(dataset)}")
        return assignment
    raise ConfigError(f"unknown cohort source {part!r} "
                      "(expected attr:NAME, threshold:NAME:T, implicit or csv:PATH)")


# ---------------------------------------------------------------------------
# commands


def cmd_synth(run: Run) -> list[Path]:
    (path,) = run.claim(DATA_FILE)
    dataset = generate_synthetic(run.config.synth)
    write_jsonl(dataset, path)
    logger.info("wrote %d examples to %s", len(dataset), path)
    return [path]


def cmd_train_lm(run: Run) -> list[Path]:
    outputs = run.claim(LM_FILE, EMBED_FILE, LM_HISTORY_FILE)
    dataset = run.dataset()
    lm = train_lm(dataset, run.config.userlm)
    save_lm(lm, outputs[0])
    write_embeddings(user_embeddings(lm), outputs[1])
    with open(outputs[2], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        w.writerows((e, repr(loss)) for e, loss in enumerate(lm.history))
    logger.info("trained user LM over %d users", len(lm.vocab.user_ids))
    return outputs


def cmd_cluster(run: Run, embeddings: str | None = None) -> list[Path]:
    outputs = run.claim(IMPLICIT_FILE, USER_CLUSTER_FILE)
    src = Path(embeddings) if embeddings else run.path(EMBED_FILE)
    if not src.exists():
        raise CLIError(f"embeddings file not found: {src}")
    vectors = read_embeddings(src)
    cfg = run.config.cluster
    if cfg.k > len(vectors):
        raise CLIError(f"k={cfg.k} exceeds the number of users ({len(vectors)})")
    dataset = run.dataset()
    users, fit = cluster_users(vectors, cfg.k, cfg.seed, cfg.normalize, cfg.max_iter, cfg.tol)
    assignment = assignment_from_clusters(users, fit, dataset)
    co.write_csv(assignment, outputs[0])
    with open(outputs[1], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "cluster_id", "cluster_name"])
        for u, c in zip(users, fit.labels.tolist()):
            w.writerow([u, c, assignment.cohort_names[c]])
    logger.info("clustered %d users into %d cohorts (inertia %.4f)", len(users), cfg.k, fit.inertia)
    return outputs


def cmd_train(run: Run) -> list[Path]:
    outputs = run.claim(CHECKPOINT_FILE, HISTORY_FILE)
    dataset = run.dataset()
    assignment = resolve_cohorts(run.config.eval.train_cohort, dataset, run.out)
    train_idx, _ = run.split(dataset)
    params, history = train(dataset.subset(train_idx), assignment.restrict(train_idx),
                            run.config.model, run.config.trainer)
    clf.save(params, outputs[0])
    history.to_csv(outputs[1])
    logger.info("trained classifier (lambda=%g) for %d epochs",
                run.config.trainer.lam, len(history))
    return outputs


def cmd_eval(run: Run, checkpoint: str | None = None) -> list[Path]:
    ecfg = run.config.eval
    outputs = run.claim(*(REPORT_STEM + REPORT_SUFFIX[f] for f in ecfg.formats))
    src = Path(checkpoint) if checkpoint else run.path(CHECKPOINT_FILE)
    if not src.exists():
        raise CLIError(f"checkpoint not found: {src}")
    params = clf.load(src)
    dataset = run.dataset()
    _, test_idx = run.split(dataset)
    test = dataset.subset(test_idx)
    reports = []
    for source in ecfg.cohorts:
        assignment = resolve_cohorts(source, dataset, run.out).restrict(test_idx)
        report = ev.disparity_stats(ev.per_cohort_accuracy(params, test, assignment))
        report = ev.with_fairness(report, test.labels, assignment, ecfg.positive_classes)
        reports.append(replace(report, assignment=source) if source != report.assignment
                       else report)
    for fmt, path in zip(ecfg.formats, outputs):
        ev.emit_report(reports, fmt, path)
    return outputs


def cmd_sweep(run: Run) -> list[Path]:
    (path,) = run.claim(SUMMARY_FILE)
    ecfg = run.config.eval
    dataset = run.dataset()
    sources = list(ecfg.cohorts)
    if ecfg.train_cohort not in sources:
        sources.insert(0, ecfg.train_cohort)
    assignments = [resolve_cohorts(s, dataset, run.out) for s in sources]
    assignments = [replace(a, name=s) for a, s in zip(assignments, sources)]
    result = ev.lambda_sweep(
        dataset, assignments, ecfg.lambdas, run.config.model, run.config.trainer,
        test_fraction=run.config.data.test_fraction, split_seed=run.config.data.split_seed,
        train_on=sources.index(ecfg.train_cohort),
    )
    ev.write_summary_csv(result, path)
    return [path]


# ---------------------------------------------------------------------------
# argument parsing


def _global_flags(defaults: bool) -> argparse.ArgumentParser:
    # Shared by the top-level parser and every subcommand, so the flags work
    # either before or after the command name.
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", default=d(None), help="JSON run config")
    p.add_argument("--seed", type=int, default=d(None), help="seed applied to every stage")
    p.add_argument("--out", metavar="DIR", default=d(None), help="output directory")
    p.add_argument("--no-clobber", action="store_true", default=d(False),
                   help="fail instead of overwriting existing outputs")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", default=d([]),
                   dest="overrides", help="override one config key (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cohortparity", parents=[_global_flags(True)],
                                     description="Parity-penalized text classification pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    shared = [_global_flags(False)]
    sub.add_parser("synth", parents=shared, help="generate the synthetic corpus")
    sub.add_parser("train-lm", parents=shared, help="train the user-token language model")
    p = sub.add_parser("cluster", parents=shared, help="cluster user embeddings")
    p.add_argument("--embeddings", metavar="PATH")
    p.add_argument("--k", type=int)
    p = sub.add_parser("train", parents=shared, help="train the classifier")
    p.add_argument("--lambda", dest="lam", type=float)
    p = sub.add_parser("eval", parents=shared, help="per-cohort evaluation reports")
    p.add_argument("--checkpoint", metavar="PATH")
    p = sub.add_parser("sweep", parents=shared, help="retrain across lambda values")
    p.add_argument("--lambdas", type=_float_list, help="comma-separated, default 0,0.5,0.8")
    return parser


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config)
    if args.overrides:
        config = apply_overrides(config, args.overrides)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    extra = {}
    if args.out is not None:
        extra["paths.out"] = args.out
    if getattr(args, "k", None) is not None:
        extra["cluster.k"] = args.k
    if getattr(args, "lam", None) is not None:
        extra["trainer.lam"] = args.lam
    if getattr(args, "lambdas", None) is not None:
        extra["eval.lambdas"] = list(args.lambdas)
    if extra:
        config = apply_overrides(config, extra)
    return config.validate()


COMMANDS = {
    "synth": lambda run, args: cmd_synth(run),
    "train-lm": lambda run, args: cmd_train_lm(run),
    "cluster": lambda run, args: cmd_cluster(run, args.embeddings),
    "train": lambda run, args: cmd_train(run),
    "eval": lambda run, args: cmd_eval(run, args.checkpoint),
    "sweep": lambda run, args: cmd_sweep(run),
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        run = Run(resolve_config(args), no_clobber=args.no_clobber)
        for path in COMMANDS[args.command](run, args):
            print(path)
    except ConfigError as exc:
        print(f"cohortparity: config error: {exc}", file=sys.stderr)
        return 2
    except (CLIError, TrainingError, DataFormatError, SchemaError, OSError, KeyError,
            ValueError) as exc:
        print(f"cohortparity {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
