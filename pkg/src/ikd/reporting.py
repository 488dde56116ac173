"""Run artifacts on disk and the analyses computed from them.

A run directory holds ``manifest.json``, ``history.jsonl`` (header line plus
one record per step), ``feedback.jsonl`` (ikd only), ``metrics.json`` and the
final parameters of each model.
"""

from __future__ import annotations

import csv
import json
import subprocess
from pathlib import Path

import numpy as np

from ikd import __version__
from ikd.errors import UsageError
from ikd.trainer import HISTORY_FIELDS, TrainRun

HISTORY_SCHEMA = "ikd.history/1"
FEEDBACK_SCHEMA = "ikd.feedback/1"
ENTROPY_SCHEMA = "ikd.entropy/1"
SCATTER_SCHEMA = "ikd.feedback-scatter/1"
COMPARE_SCHEMA = "ikd.compare/1"
MANIFEST_SCHEMA = "ikd.manifest/1"
METRICS_SCHEMA = "ikd.metrics/1"
SUMMARY_SCHEMA = "ikd.summary/1"

NONPOS_TOL = 1e-12


def code_version():
    try:
        rev = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=Path(__file__).resolve().parent,
        )
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _dump(obj):
    return json.dumps(obj, sort_keys=False, allow_nan=True)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def write_history(run: TrainRun, path, dataset_name=""):
    header = {
        "schema": HISTORY_SCHEMA,
        "mode": run.config.mode,
        "dataset": dataset_name,
        "train_size": run.train_size,
        "course_batch": run.config.course_batch,
        "steps_per_epoch": run.steps_per_epoch,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dump(header) + "\n")
        for r in run.history:
            fh.write(_dump(r.to_json()) + "\n")


def write_feedback(run: TrainRun, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dump({"schema": FEEDBACK_SCHEMA}) + "\n")
        for r in run.history:
            if r.fb is None:
                continue
            fh.write(
                _dump(
                    {
                        "step": r.step,
                        "fb": r.fb.tolist(),
                        "teacher_probs": r.teacher_probs.tolist(),
                        "targets": r.targets.tolist(),
                    }
                )
                + "\n"
            )


def read_history(path):
    """Return ``(header, records)``. Raises UsageError when there are no step records."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"no history file at {path}")
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise UsageError(f"{path} is empty")
    header = json.loads(lines[0])
    if header.get("schema") != HISTORY_SCHEMA:
        raise UsageError(f"{path}: expected schema {HISTORY_SCHEMA}, got {header.get('schema')!r}")
    records = [json.loads(ln) for ln in lines[1:]]
    if not records:
        raise UsageError(f"{path} holds no step records")
    missing = set(HISTORY_FIELDS) - set(records[0])
    if missing:
        raise UsageError(f"{path}: records lack fields {sorted(missing)}")
    return header, records


def read_feedback(path):
    path = Path(path)
    if not path.exists():
        raise UsageError(f"no feedback file at {path}")
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines or json.loads(lines[0]).get("schema") != FEEDBACK_SCHEMA:
        raise UsageError(f"{path} is not a feedback log")
    rows = [json.loads(ln) for ln in lines[1:]]
    if not rows:
        raise UsageError(f"{path} holds no feedback entries")
    return rows


# -- analyses -----------------------------------------------------------------------


def epoch_entropy_table(header, records):
    """Sample-weighted mean teacher entropy per epoch."""
    n, N, per_epoch = header["train_size"], header["course_batch"], header["steps_per_epoch"]
    sums = {}
    for r in records:
        h = r["teacher_entropy_mean"]
        if h is None:
            raise UsageError("history has no teacher entropy (ft mode?)")
        epoch, k = divmod(r["step"], per_epoch)
        size = min(N, n - k * N)
        tot, cnt = sums.get(epoch, (0.0, 0))
        sums[epoch] = (tot + h * size, cnt + size)
    return [tot / cnt for _, (tot, cnt) in sorted(sums.items())]


def write_entropy_csv(path, dataset, entropies):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema={ENTROPY_SCHEMA}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset"] + [f"epoch_{i + 1}" for i in range(len(entropies))])
        w.writerow([dataset] + [f"{h:.6f}" for h in entropies])


def feedback_scatter(rows):
    """``(teacher_prob, fb, is_target, step)`` tuples, one per (course sample, class)."""
    out = []
    for row in rows:
        fb = np.asarray(row["fb"])
        probs = np.asarray(row["teacher_probs"])
        for i, target in enumerate(row["targets"]):
            for j in range(fb.shape[1]):
                out.append((float(probs[i, j]), float(fb[i, j]), int(j == target), row["step"]))
    return out


def feedback_summary(scatter, records):
    fb = np.array([s[1] for s in scatter])
    is_t = np.array([s[2] for s in scatter], dtype=bool)
    tgt, non = fb[is_t], fb[~is_t]
    t_range = float(tgt.max() - tgt.min()) if tgt.size else 0.0
    n_range = float(non.max() - non.min()) if non.size else 0.0
    abs_means = [r["fb_abs_mean"] for r in records if r["fb_abs_mean"] is not None]
    k = max(1, len(abs_means) // 10)
    first, last = float(np.mean(abs_means[:k])), float(np.mean(abs_means[-k:]))
    return {
        "n_points": int(fb.size),
        "frac_target_nonpositive": float((tgt <= NONPOS_TOL).mean()) if tgt.size else None,
        "frac_nontarget_nonnegative": float((non >= -NONPOS_TOL).mean()) if non.size else None,
        "target_range": t_range,
        "nontarget_range": n_range,
        "range_ratio": t_range / n_range if n_range > 0 else None,
        "first_decile_abs_mean": first,
        "last_decile_abs_mean": last,
        "decays": last < first,
    }


def write_scatter_csv(path, scatter):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema={SCATTER_SCHEMA}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["teacher_prob", "fb", "is_target", "step"])
        for p, f, t, s in scatter:
            w.writerow([repr(p), repr(f), t, s])


def compare_rows(results):
    """``results``: list of ``(mode, seed, test_acc)``. Returns data rows then one summary row per mode."""
    rows = [{"mode": m, "seed": str(s), "test_acc": a, "test_acc_std": ""} for m, s, a in results]
    for mode in dict.fromkeys(m for m, _, _ in results):
        accs = np.array([a for m, _, a in results if m == mode])
        rows.append({"mode": mode, "seed": "mean", "test_acc": float(accs.mean()), "test_acc_std": float(accs.std())})
    return rows


def write_compare_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema={COMPARE_SCHEMA}\n")
        w = csv.DictWriter(fh, fieldnames=["mode", "seed", "test_acc", "test_acc_std"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_compare_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))
