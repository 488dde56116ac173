"""Scalar distillation losses and the soft-target entropy diagnostic.

All losses are in nats and average over the batch rows.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ikd import engine
from ikd.engine import Tensor
from ikd.errors import ConfigError, DataError, DomainError


@dataclass
class LossBundle:
    l_kd: float | None = None
    l_ce_s: float | None = None
    l_stu: float | None = None
    l_meta: float | None = None
    l_ce_t: float | None = None
    l_tea: float | None = None
    l_ikd: float | None = None

    def as_dict(self):
        return asdict(self)

    def identity_residuals(self, lam, gamma):
        """Absolute gaps in the three mixing identities; ``None`` where a component is missing."""
        out = {"stu": None, "tea": None, "ikd": None}
        if None not in (self.l_stu, self.l_kd, self.l_ce_s):
            out["stu"] = abs(self.l_stu - (lam * self.l_kd + (1 - lam) * self.l_ce_s))
        if None not in (self.l_tea, self.l_meta, self.l_ce_t):
            out["tea"] = abs(self.l_tea - (gamma * self.l_meta + (1 - gamma) * self.l_ce_t))
        if None not in (self.l_ikd, self.l_stu, self.l_tea):
            out["ikd"] = abs(self.l_ikd - (self.l_stu + self.l_tea))
        return out


def one_hot(labels, num_classes) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DataError(f"labels must be 1-d, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.equal(np.mod(labels, 1), 0)):
            raise DataError("labels must be integers")
        labels = labels.astype(np.int64)
    bad = np.flatnonzero((labels < 0) | (labels >= num_classes))
    if bad.size:
        raise DataError(f"label {labels[bad[0]]} at row {bad[0]} outside [0, {num_classes})")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _as_targets(y_true, num_classes):
    y_true = np.asarray(y_true.values if isinstance(y_true, Tensor) else y_true, dtype=np.float64)
    if y_true.ndim == 1:
        return one_hot(y_true, num_classes).argmax(axis=1)
    if y_true.shape[1] != num_classes:
        raise DataError(f"one-hot width {y_true.shape[1]} != {num_classes} classes")
    ok = np.all((y_true == 0) | (y_true == 1), axis=1) & (y_true.sum(axis=1) == 1)
    if not ok.all():
        raise DataError(f"row {int(np.flatnonzero(~ok)[0])} of y_true is not one-hot")
    return y_true.argmax(axis=1)


def _kl_backward(g, y_t, y_s, log_ratio, n):
    # Returns (d/dy_teacher, d/dy_student) of mean_i sum_j y_t (log y_t - log y_s).
    d_t = np.where(y_t > 0, log_ratio + 1.0, 0.0) * (g / n)
    d_s = -(y_t / y_s) * (g / n)
    return d_t, d_s


def kd_loss(y_teacher, y_student) -> Tensor:
    """Mean over rows of KL(y_teacher || y_student).

    The teacher argument is differentiated too; detach it at the call site when
    the teacher must not learn through this path.
    """
    y_teacher, y_student = engine.as_tensor(y_teacher), engine.as_tensor(y_student)
    if y_teacher.shape != y_student.shape or y_teacher.ndim != 2:
        raise DataError(f"kd_loss shapes {y_teacher.shape} and {y_student.shape} differ")
    y_t, y_s = y_teacher.values, y_student.values
    bad = np.argwhere(~(y_s > 0))
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        raise DomainError(f"student probability {y_s[idx]!r} at {idx} is not positive", index=idx)
    n = y_t.shape[0]
    with np.errstate(divide="ignore"):
        log_t = np.where(y_t > 0, np.log(np.where(y_t > 0, y_t, 1.0)), 0.0)
    log_ratio = log_t - np.log(y_s)
    value = float((y_t * log_ratio).sum() / n)
    return engine.make_op(
        "kd_loss",
        value,
        (y_teacher, y_student),
        lambda g: _kl_backward(g, y_t, y_s, log_ratio, n),
    )


def ce_loss(y_true, y_pred) -> Tensor:
    """Mean of ``-log y_pred`` at the target class. ``y_true`` is one-hot (or integer labels)."""
    y_pred = engine.as_tensor(y_pred)
    targets = _as_targets(y_true, y_pred.shape[1])
    if targets.size != y_pred.shape[0]:
        raise DataError(f"{targets.size} labels for {y_pred.shape[0]} predictions")
    picked = y_pred[np.arange(targets.size), targets]
    return -engine.log(picked).mean()


def ce_from_logits(y_true, logits, temperature=1.0) -> Tensor:
    """Same value as ``ce_loss(y_true, softmax_rows(logits))`` without the underflow risk."""
    logits = engine.as_tensor(logits)
    targets = _as_targets(y_true, logits.shape[1])
    lp = engine.log_softmax_rows(logits, temperature)
    return -lp[np.arange(targets.size), targets].mean()


def _check_weight(w, name):
    if not 0.0 <= w <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {w!r}")


def student_loss(l_kd, l_ce_s, lam):
    _check_weight(lam, "lambda")
    return engine.scale(l_kd, lam) + engine.scale(l_ce_s, 1.0 - lam)


def teacher_loss(l_meta, l_ce_t, gamma):
    _check_weight(gamma, "gamma")
    return engine.scale(l_meta, gamma) + engine.scale(l_ce_t, 1.0 - gamma)


def row_entropy(y) -> Tensor:
    """Per-row entropy ``-sum_j y_ij ln y_ij`` with ``0 ln 0 = 0``."""
    y = engine.as_tensor(y)
    v = y.values
    pos = v > 0
    logs = np.log(np.where(pos, v, 1.0))
    h = -(v * logs).sum(axis=1)
    return engine.make_op("row_entropy", h, (y,), lambda g: (-(logs + 1.0) * pos * g[:, None],))
