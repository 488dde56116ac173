"""Independent numerical ground truth for every gradient path.

``fd_gradient`` is plain central differences over a ParamSet. The exact
meta-gradient oracle literally performs the inner student step for each
perturbed teacher and differences the resulting exam loss; it never asks the
engine to differentiate through an optimizer step.

The ``linear_*`` helpers are closed-form numpy gradients for linear softmax
models, used as brute-force references that share no code with the engine.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ikd import engine
from ikd.errors import ConfigError, NumericError, ShapeError
from ikd.models import ParamSet
from ikd.trainer import TrainConfig, meta_loss, soft_targets, student_objective

FD_EPS = 1e-5
META_FD_EPS = 1e-4
MAX_META_PARAMS = 500


@dataclass
class GradReport:
    max_rel_err: float
    cosine: float
    rel_norm_err: float
    eps: float | None = None

    def as_dict(self):
        return asdict(self)


def compare(g1, g2, eps=None) -> GradReport:
    g1 = np.asarray(g1, dtype=np.float64).ravel()
    g2 = np.asarray(g2, dtype=np.float64).ravel()
    if g1.shape != g2.shape:
        raise ShapeError(f"cannot compare gradients of length {g1.size} and {g2.size}")
    denom = np.maximum(np.maximum(np.abs(g1), np.abs(g2)), 1e-12)
    max_rel = float(np.max(np.abs(g1 - g2) / denom)) if g1.size else 0.0
    n1, n2 = np.linalg.norm(g1), np.linalg.norm(g2)
    if n1 == 0 and n2 == 0:
        cosine = 1.0
    elif n1 == 0 or n2 == 0:
        cosine = 0.0
    else:
        cosine = float(np.clip(g1 @ g2 / (n1 * n2), -1.0, 1.0))
    rel_norm = float(np.linalg.norm(g1 - g2) / max(n1, n2, 1e-300))
    return GradReport(max_rel, cosine, rel_norm, eps)


def fd_gradient(scalar_fn, params: ParamSet, eps=FD_EPS) -> np.ndarray:
    """Central differences of ``scalar_fn(params)`` over every coordinate of ``params``.

    Parameters are perturbed in place and restored exactly afterwards.
    """
    tensors = list(params)
    out = np.empty(sum(t.size for t in tensors))
    k = 0
    for t in tensors:
        original = t.values
        for idx in np.ndindex(*t.shape):
            vals = []
            for sign in (1.0, -1.0):
                bumped = original.copy()
                bumped[idx] += sign * eps
                t.values = bumped
                f = float(scalar_fn(params))
                if not math.isfinite(f):
                    t.values = original
                    raise NumericError(f"non-finite value {f} at coordinate {k}", coordinate=k)
                vals.append(f)
            out[k] = (vals[0] - vals[1]) / (2.0 * eps)
            k += 1
        t.values = original
    return out


def inner_step(teacher: ParamSet, student: ParamSet, course, cfg: TrainConfig) -> ParamSet:
    """Student after one SGD step on the course objective, teacher targets held as constants."""
    y_t = engine.detach(soft_targets(teacher, course.x, cfg))
    phi = student.copy()
    _, _, l_stu = student_objective(y_t, phi, course, cfg)
    grads = engine.grad(l_stu, list(phi))
    for t, g in zip(phi, grads):
        t.values = t.values - cfg.alpha * g
    return phi


def unrolled_meta_loss(teacher, student, course, exam, cfg) -> float:
    return meta_loss(inner_step(teacher, student, course, cfg), exam).item()


def exact_meta_gradient_fd(teacher, student, course, exam, cfg: TrainConfig, eps=META_FD_EPS) -> np.ndarray:
    """d/dtheta of the exam loss after one real inner student step, by central differences."""
    if teacher.num_params() > MAX_META_PARAMS:
        raise ConfigError(
            f"exact meta-gradient oracle limited to {MAX_META_PARAMS} teacher params, got {teacher.num_params()}"
        )
    return fd_gradient(lambda th: unrolled_meta_loss(th, student, course, exam, cfg), teacher, eps)


# -- closed-form references for linear softmax models ------------------------------


def _softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def linear_log_prob_grad(W, b, x, cls, temperature=1.0):
    """Flat gradient over (W, b) of ``log softmax(x W + b)/T`` at class ``cls`` for one row ``x``."""
    p = _softmax(((x @ W + b) / temperature)[None, :])[0]
    r = -p
    r[cls] += 1.0
    r /= temperature
    return np.concatenate([np.outer(x, r).ravel(), r])


def linear_ce_grad(W, b, X, y):
    """Flat gradient over (W, b) of mean cross-entropy."""
    P = _softmax(X @ W + b)
    P[np.arange(len(y)), y] -= 1.0
    P /= len(y)
    return np.concatenate([(X.T @ P).ravel(), P.sum(axis=0)])


def linear_feedback(W, b, course_x, exam_x, exam_y, alpha, temperature=1.0):
    """Brute-force feedback matrix for a linear student."""
    g_meta = linear_ce_grad(W, b, exam_x, exam_y)
    C = W.shape[1]
    return np.array(
        [[alpha * g_meta @ linear_log_prob_grad(W, b, x, j, temperature) for j in range(C)] for x in course_x]
    )


def linear_exact_meta_gradient(teacher_W, teacher_b, W, b, course_x, course_y, exam_x, exam_y, cfg: TrainConfig):
    """Hand-derived exact meta-gradient for a linear teacher and linear student (T=1 on the student).

    phi' = phi - alpha * grad_phi L_stu; the teacher enters only through the KD
    term, whose phi-gradient is ``-(lam/N) sum_ij y^T_ij grad log y^S_ij``. Hence
    dL_meta(phi')/dtheta = alpha (lam/N) sum_ij <g'_meta, grad log y^S_ij> dy^T_ij/dtheta
    with g'_meta evaluated at the updated student.
    """
    if cfg.temper_student:
        raise ConfigError("closed form assumes an untempered student")
    T = cfg.temperature
    N, C = len(course_y), W.shape[1]
    Yt = _softmax((course_x @ teacher_W + teacher_b) / T)
    Ps = _softmax(course_x @ W + b)
    # grad of the student objective at phi_t
    kd_resid = (Ps - Yt) / N
    ce_resid = Ps.copy()
    ce_resid[np.arange(N), course_y] -= 1.0
    ce_resid /= N
    resid = cfg.lam * kd_resid + (1 - cfg.lam) * ce_resid
    W1 = W - cfg.alpha * course_x.T @ resid
    b1 = b - cfg.alpha * resid.sum(axis=0)
    g_meta = linear_ce_grad(W1, b1, exam_x, exam_y)
    out_W = np.zeros_like(teacher_W)
    out_b = np.zeros_like(teacher_b)
    for i in range(N):
        for j in range(C):
            w = cfg.alpha * cfg.lam / N * (g_meta @ linear_log_prob_grad(W, b, course_x[i], j))
            # d y_ij / d z_ik = y_ij (delta_jk - y_ik) / T
            dz = Yt[i, j] * ((np.arange(C) == j) - Yt[i]) / T
            out_W += w * np.outer(course_x[i], dz)
            out_b += w * dz
    return np.concatenate([out_W.ravel(), out_b])

