"""Command-line entry points: ``ikd train|compare|analyze-entropy|analyze-feedback|gradcheck``.

Exit codes: 0 success, 1 runtime failure (or failed gradcheck), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from ikd import checks, models, oracles, reporting
from ikd.data import gen_blobs, gen_xor, load_csv, train_test_split
from ikd.errors import ConfigError, DataError, ParseError, UsageError
from ikd.trainer import TrainConfig, run_training

log = logging.getLogger("ikd")

# underscored flag name -> default; data and output options included
DEFAULTS = {
    "mode": "ikd",
    "data": "blobs",
    "alpha": 0.05,
    "beta": 0.05,
    "lambda": 0.5,
    "gamma": 0.5,
    "temp": 1.0,
    "temper_student": False,
    "epochs": 3,
    "seed": 0,
    "course_batch": 4,
    "exam_batch": 4,
    "exam_pairing": "independent",
    "pretrain_epochs": 3,
    "pretrain_lr": 0.1,
    "teacher_arch": "mlp",
    "teacher_hidden": 16,
    "student_arch": "linear",
    "student_hidden": 0,
    "init_scale": 0.1,
    "classes": 3,
    "dim": 5,
    "n_per_class": 50,
    "spread": 0.2,
    "label_noise": 0.2,
    "xor_n": 200,
    "xor_noise": 0.1,
    "test_fraction": 0.2,
    "out": None,
}

CONFIG_FIELDS = {
    "mode": "mode",
    "alpha": "alpha",
    "beta": "beta",
    "lambda": "lam",
    "gamma": "gamma",
    "temp": "temperature",
    "temper_student": "temper_student",
    "epochs": "epochs",
    "seed": "seed",
    "course_batch": "course_batch",
    "exam_batch": "exam_batch",
    "exam_pairing": "exam_pairing",
    "pretrain_epochs": "teacher_pretrain_epochs",
    "pretrain_lr": "teacher_pretrain_lr",
    "teacher_arch": "teacher_arch",
    "teacher_hidden": "teacher_hidden",
    "student_arch": "student_arch",
    "student_hidden": "student_hidden",
    "init_scale": "init_scale",
}

TEACHER_ONLY = ("beta", "gamma", "lambda", "temp", "pretrain_epochs", "pretrain_lr")


class ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ArgError(message)


def _add_training_flags(p):
    p.add_argument("--config", help="flat JSON object whose keys mirror the flag names")
    p.add_argument("--mode", choices=["ft", "kd", "ikd"], type=str.lower)
    p.add_argument("--data", help="blobs | xor | csv:<path>")
    p.add_argument("--alpha", type=float, help="student learning rate")
    p.add_argument("--beta", type=float, help="teacher learning rate")
    p.add_argument("--lambda", dest="lambda", type=float, help="KD weight in the student loss")
    p.add_argument("--gamma", type=float, help="meta weight in the teacher loss")
    p.add_argument("--temp", type=float, help="soft-target temperature")
    p.add_argument("--temper-student", action="store_true", default=None, help="temper student logits as well")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--course-batch", type=int)
    p.add_argument("--exam-batch", type=int)
    p.add_argument("--exam-pairing", choices=["independent", "course"])
    p.add_argument("--pretrain-epochs", type=int)
    p.add_argument("--pretrain-lr", type=float)
    p.add_argument("--teacher-arch", choices=models.ARCHITECTURES)
    p.add_argument("--teacher-hidden", type=int)
    p.add_argument("--student-arch", choices=models.ARCHITECTURES)
    p.add_argument("--student-hidden", type=int)
    p.add_argument("--init-scale", type=float)
    p.add_argument("--classes", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--spread", type=float)
    p.add_argument("--label-noise", type=float)
    p.add_argument("--xor-n", type=int)
    p.add_argument("--xor-noise", type=float)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--out", help="output directory (default: $IKD_OUT_DIR)")


def build_parser():
    parser = _Parser(prog="ikd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one model pair and write a run directory")
    _add_training_flags(p)

    p = sub.add_parser("compare", help="FT / KD / IKD over several seeds")
    _add_training_flags(p)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("analyze-entropy", help="per-epoch teacher soft-target entropy")
    p.add_argument("history")
    p.add_argument("--csv", help="output CSV (default: entropy.csv next to the history)")

    p = sub.add_parser("analyze-feedback", help="feedback scatter data and summary stats")
    p.add_argument("history")
    p.add_argument("--csv", help="scatter CSV (default: feedback_scatter.csv next to the history)")

    p = sub.add_parser("gradcheck", help="run the finite-difference oracle suite")
    p.add_argument("--eps", type=float, default=oracles.FD_EPS)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    return parser


def resolve_options(args):
    """Defaults < --config file < explicit flags. Returns ``(options, explicitly_set_keys)``."""
    opts = dict(DEFAULTS)
    explicit = set()
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a flat JSON object")
        for key, value in raw.items():
            k = key.replace("-", "_").lstrip("_")
            if k not in DEFAULTS:
                raise UsageError(f"unknown config key {key!r}")
            opts[k] = value
            explicit.add(k)
    for k in DEFAULTS:
        v = getattr(args, k, None)
        if v is not None:
            opts[k] = v
            explicit.add(k)
    if opts["out"] is None:
        opts["out"] = os.environ.get("IKD_OUT_DIR")
    return opts, explicit


def config_from_options(opts) -> TrainConfig:
    return TrainConfig(**{field: opts[k] for k, field in CONFIG_FIELDS.items()})


def load_dataset(opts):
    spec = str(opts["data"])
    seed = int(opts["seed"])
    if spec == "blobs":
        data = gen_blobs(opts["classes"], opts["dim"], opts["n_per_class"], opts["spread"], opts["label_noise"], seed)
    elif spec == "xor":
        data = gen_xor(opts["xor_n"], opts["xor_noise"], seed)
    elif spec.startswith("csv:"):
        data = load_csv(spec[4:])
    else:
        raise UsageError(f"--data must be blobs, xor or csv:<path>, got {spec!r}")
    return train_test_split(data, opts["test_fraction"], seed)


def _final_losses(history):
    if not history:
        return {}
    return {k: v for k, v in history[-1].losses.as_dict().items() if v is not None}


def execute_run(opts, out_dir):
    """Train once and write the full run directory. Returns the metrics dict."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = config_from_options(opts)
    train, test = load_dataset(opts)
    manifest = {
        "schema": reporting.MANIFEST_SCHEMA,
        "config": opts,
        "train_config": cfg.to_dict(),
        "dataset": {"train": train.describe(), "test": test.describe() if test is not None else None},
        "code_version": reporting.code_version(),
        "duration_s": None,
        "outputs": {
            "history": "history.jsonl",
            "feedback": "feedback.jsonl" if cfg.mode == "ikd" else None,
            "metrics": "metrics.json",
        },
    }
    reporting.write_json(out_dir / "manifest.json", manifest)
    start = time.perf_counter()
    run = run_training(cfg, train)
    reporting.write_history(run, out_dir / "history.jsonl", train.name)
    if cfg.mode == "ikd":
        reporting.write_feedback(run, out_dir / "feedback.jsonl")
    models.save_params(run.student, out_dir / "student.json")
    if run.teacher is not None:
        models.save_params(run.teacher, out_dir / "teacher.json")
    metrics = {
        "schema": reporting.METRICS_SCHEMA,
        "mode": cfg.mode,
        "seed": cfg.seed,
        "train_acc": models.accuracy(run.student, train.features, train.labels),
        "test_acc": models.accuracy(run.student, test.features, test.labels) if test is not None else None,
        "teacher_test_acc": (
            models.accuracy(run.teacher, test.features, test.labels)
            if run.teacher is not None and test is not None
            else None
        ),
        "final_losses": _final_losses(run.history),
    }
    reporting.write_json(out_dir / "metrics.json", metrics)
    manifest["duration_s"] = round(time.perf_counter() - start, 3)
    reporting.write_json(out_dir / "manifest.json", manifest)
    return metrics


def _warn_unused(opts, explicit):
    if opts["mode"] == "ft":
        for k in TEACHER_ONLY:
            if k in explicit:
                log.warning("--%s is ignored in ft mode", k.replace("_", "-"))


def _require_out(opts):
    if not opts["out"]:
        raise UsageError("--out is required (or set IKD_OUT_DIR)")
    return Path(opts["out"])


def cmd_train(args):
    opts, explicit = resolve_options(args)
    out = _require_out(opts)
    _warn_unused(opts, explicit)
    metrics = execute_run(opts, out)
    print(json.dumps({k: metrics[k] for k in ("mode", "train_acc", "test_acc")}))
    return 0


def _compare_job(job):
    opts, out_dir = job
    metrics = execute_run(opts, out_dir)
    return opts["mode"], opts["seed"], metrics["test_acc"]


def cmd_compare(args):
    opts, _ = resolve_options(args)
    out = _require_out(opts)
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    base_seed = int(opts["seed"])
    jobs = []
    for mode in ("ft", "kd", "ikd"):
        for k in range(args.seeds):
            seed = base_seed + k
            jobs.append(({**opts, "mode": mode, "seed": seed}, out / "runs" / f"{mode}_seed{seed}"))
    for job_opts, _ in jobs:
        config_from_options(job_opts)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_compare_job, jobs))
    else:
        results = [_compare_job(j) for j in jobs]
    rows = reporting.compare_rows(results)
    reporting.write_compare_csv(out / "compare.csv", rows)
    means = {r["mode"]: r["test_acc"] for r in rows if r["seed"] == "mean"}
    soft = {
        "schema": reporting.SUMMARY_SCHEMA,
        "check": "ikd_mean >= kd_mean - 0.005",
        "ikd_mean": means["ikd"],
        "kd_mean": means["kd"],
        "ft_mean": means["ft"],
        "holds": means["ikd"] >= means["kd"] - 0.005,
    }
    reporting.write_json(out / "compare_summary.json", soft)
    flag = "ok" if soft["holds"] else "FLAGGED (soft check, not a failure)"
    print(f"ft={means['ft']:.4f} kd={means['kd']:.4f} ikd={means['ikd']:.4f}  ikd>=kd-0.5pt: {flag}")
    return 0


def cmd_analyze_entropy(args):
    header, records = reporting.read_history(args.history)
    table = reporting.epoch_entropy_table(header, records)
    path = Path(args.csv) if args.csv else Path(args.history).with_name("entropy.csv")
    reporting.write_entropy_csv(path, header.get("dataset", ""), table)
    print(json.dumps({"mode": header["mode"], "epoch_entropy": table, "csv": str(path)}))
    return 0


def cmd_analyze_feedback(args):
    header, records = reporting.read_history(args.history)
    if header["mode"] != "ikd":
        raise UsageError(f"no feedback in a {header['mode']} history; only ikd runs log feedback")
    rows = reporting.read_feedback(Path(args.history).with_name("feedback.jsonl"))
    scatter = reporting.feedback_scatter(rows)
    path = Path(args.csv) if args.csv else Path(args.history).with_name("feedback_scatter.csv")
    reporting.write_scatter_csv(path, scatter)
    summary = reporting.feedback_summary(scatter, records)
    reporting.write_json(path.with_name("feedback_summary.json"), {"schema": reporting.SUMMARY_SCHEMA, **summary})
    print(json.dumps(summary))
    return 0


def cmd_gradcheck(args):
    report = checks.run_suite(eps=args.eps, tol=args.tol, n_instances=args.instances, seed=args.seed)
    print(json.dumps(report, indent=2))
    return 0 if report["passed"] else 1


COMMANDS = {
    "train": cmd_train,
    "compare": cmd_compare,
    "analyze-entropy": cmd_analyze_entropy,
    "analyze-feedback": cmd_analyze_feedback,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ArgError as exc:
        print(f"ikd: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"ikd: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ParseError) as exc:
        print(f"ikd: data error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        log.debug("unhandled", exc_info=True)
        print(f"ikd: failed: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
