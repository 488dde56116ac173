"""Interactive distillation: alternating course steps (student) and exam steps (teacher).

Per step in ``ikd`` mode, with student parameters phi_t and teacher theta_t:

1. feedback ``fb[i, j] = alpha * <grad_phi L_meta(exam), grad_phi log y^S_ij(course)>``
   evaluated at phi_t (first-order: the post-update student is replaced by phi_t);
2. course step: one SGD step on ``lam * KL(y^T || y^S) + (1 - lam) * CE(y, y^S)``;
3. exam step: one SGD step on theta for
   ``gamma * (lam / N) * sum_ij fb_ij * y^T_ij + (1 - gamma) * CE(y, y^T)``
   with fb held constant.

``ft`` trains the student on labels alone; ``kd`` uses a pretrained, frozen teacher.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ikd import engine, losses, models
from ikd.data import Batch, Dataset, sample_batches, steps_per_epoch
from ikd.engine import Tensor
from ikd.errors import ConfigError, ContractError, DataError
from ikd.losses import LossBundle
from ikd.models import ModelSpec, ParamSet

MODES = ("ft", "kd", "ikd")
# "independent": exam batch drawn with replacement; "course": exam batch is the course batch
PAIRINGS = ("independent", "course")

HISTORY_FIELDS = (
    "step",
    "l_kd",
    "l_ce_s",
    "l_stu",
    "l_meta",
    "l_ce_t",
    "l_tea",
    "fb_target_mean",
    "fb_target_min",
    "fb_nontarget_mean",
    "fb_abs_mean",
    "teacher_entropy_mean",
    "exam_acc",
)


@dataclass
class TrainConfig:
    mode: str = "ikd"
    alpha: float = 0.05
    beta: float = 0.05
    lam: float = 0.5
    gamma: float = 0.5
    temperature: float = 1.0
    temper_student: bool = False
    course_batch: int = 4
    exam_batch: int = 4
    epochs: int = 3
    seed: int = 0
    teacher_pretrain_epochs: int = 3
    teacher_pretrain_lr: float = 0.1
    teacher_arch: str = "mlp"
    teacher_hidden: int = 16
    student_arch: str = "linear"
    student_hidden: int = 0
    init_scale: float = 0.1
    max_feedback_passes: int = 4096
    exam_pairing: str = "independent"

    def __post_init__(self):
        self.mode = self.mode.lower()
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.alpha > 0 or not self.beta > 0:
            raise ConfigError("alpha and beta must be positive")
        for name in ("lam", "gamma"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v!r}")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")
        if self.exam_pairing not in PAIRINGS:
            raise ConfigError(f"exam_pairing must be one of {PAIRINGS}, got {self.exam_pairing!r}")
        if self.exam_pairing == "course" and self.exam_batch != self.course_batch:
            raise ConfigError("exam_pairing='course' needs exam_batch == course_batch")
        if self.course_batch < 1 or self.exam_batch < 1:
            raise ConfigError("course_batch and exam_batch must be >= 1")
        if self.epochs < 0 or self.teacher_pretrain_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if not self.teacher_pretrain_lr > 0:
            raise ConfigError("teacher_pretrain_lr must be positive")
        if self.mode != "ft" and not _teacher_covers_student(self):
            raise ConfigError(
                f"teacher ({self.teacher_arch}, hidden={self.teacher_hidden}) must be at least as large as "
                f"student ({self.student_arch}, hidden={self.student_hidden})"
            )

    def to_dict(self):
        return asdict(self)

    def student_spec(self, data: Dataset) -> ModelSpec:
        return ModelSpec(
            self.student_arch,
            data.input_dim,
            data.num_classes,
            self.student_hidden if self.student_arch == "mlp" else 0,
            init_scale=self.init_scale,
            seed=self.seed * 1000 + 2,
        )

    def teacher_spec(self, data: Dataset) -> ModelSpec:
        return ModelSpec(
            self.teacher_arch,
            data.input_dim,
            data.num_classes,
            self.teacher_hidden if self.teacher_arch == "mlp" else 0,
            init_scale=self.init_scale,
            seed=self.seed * 1000 + 1,
        )


def _teacher_covers_student(cfg):
    if cfg.student_arch == "linear":
        return True
    return cfg.teacher_arch == "mlp" and cfg.teacher_hidden >= cfg.student_hidden


@dataclass(frozen=True)
class FeedbackVector:
    """Per course sample, per class feedback weights. Plain arrays: never on a graph."""

    values: np.ndarray
    detached: bool = True

    def __post_init__(self):
        if isinstance(self.values, Tensor):
            raise ContractError("feedback must be built from detached values, not a graph Tensor")
        v = np.array(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


@dataclass
class StepRecord:
    step: int
    epoch: int
    losses: LossBundle
    fb_summary: dict = field(default_factory=dict)
    teacher_entropy_mean: float | None = None
    exam_acc: float | None = None
    course_size: int = 0
    # per-entry feedback detail for scatter output (ikd only)
    fb: np.ndarray | None = field(default=None, repr=False)
    teacher_probs: np.ndarray | None = field(default=None, repr=False)
    targets: np.ndarray | None = field(default=None, repr=False)

    def to_json(self):
        lb = self.losses
        out = {
            "step": self.step,
            "l_kd": lb.l_kd,
            "l_ce_s": lb.l_ce_s,
            "l_stu": lb.l_stu,
            "l_meta": lb.l_meta,
            "l_ce_t": lb.l_ce_t,
            "l_tea": lb.l_tea,
            "fb_target_mean": self.fb_summary.get("target_mean"),
            "fb_target_min": self.fb_summary.get("target_min"),
            "fb_nontarget_mean": self.fb_summary.get("nontarget_mean"),
            "fb_abs_mean": self.fb_summary.get("abs_mean"),
            "teacher_entropy_mean": self.teacher_entropy_mean,
            "exam_acc": self.exam_acc,
        }
        return {k: out[k] for k in HISTORY_FIELDS}


@dataclass
class TrainRun:
    config: TrainConfig
    student: ParamSet
    teacher: ParamSet | None
    history: list
    steps_per_epoch: int
    train_size: int


# -- pieces shared by the steps and the oracles ---------------------------------


def soft_targets(teacher: ParamSet, x, cfg: TrainConfig) -> Tensor:
    return engine.softmax_rows(models.forward(teacher, x), cfg.temperature)


def student_temperature(cfg: TrainConfig) -> float:
    return cfg.temperature if cfg.temper_student else 1.0


def student_objective(teacher_probs, student: ParamSet, batch: Batch, cfg: TrainConfig):
    """Return ``(l_kd, l_ce_s, l_stu)`` as graph tensors. ``teacher_probs`` may be detached."""
    z_s = models.forward(student, batch.x)
    y_s = engine.softmax_rows(z_s, student_temperature(cfg))
    l_kd = losses.kd_loss(teacher_probs, y_s)
    l_ce = losses.ce_from_logits(batch.y, z_s)
    return l_kd, l_ce, losses.student_loss(l_kd, l_ce, cfg.lam)


def meta_loss(student: ParamSet, exam: Batch) -> Tensor:
    return losses.ce_from_logits(exam.y, models.forward(student, exam.x))


def surrogate(teacher: ParamSet, fb: FeedbackVector, course: Batch, cfg: TrainConfig) -> Tensor:
    """``(lam / N) * sum_ij fb_ij * y^T_ij``; its theta-gradient is the first-order meta-gradient."""
    _check_detached(fb)
    y_t = soft_targets(teacher, course.x, cfg)
    if fb.shape != y_t.shape:
        raise ContractError(f"feedback shape {fb.shape} != teacher output shape {y_t.shape}")
    return engine.scale((y_t * fb.values).sum(), cfg.lam / len(course))


def _check_detached(fb):
    if isinstance(fb, Tensor) or not isinstance(fb, FeedbackVector) or not fb.detached:
        raise ContractError("exam step needs a detached FeedbackVector")


def _flat(grads):
    return np.concatenate([g.ravel() for g in grads])


# -- operations -----------------------------------------------------------------


def pretrain_teacher(teacher: ParamSet, data: Dataset, cfg: TrainConfig) -> None:
    """Cross-entropy fine-tuning of the teacher before distillation starts."""
    if cfg.mode not in ("kd", "ikd"):
        raise ConfigError("teacher pretraining only applies to kd/ikd modes")
    per_epoch = steps_per_epoch(len(data), cfg.course_batch)
    for step in range(cfg.teacher_pretrain_epochs * per_epoch):
        batch, _ = sample_batches(data, cfg.course_batch, 1, cfg.seed + 10_007, step)
        loss = losses.ce_from_logits(batch.y, models.forward(teacher, batch.x))
        teacher.zero_grad()
        loss.backward()
        models.sgd_step(teacher, cfg.teacher_pretrain_lr)


def course_step(teacher: ParamSet | None, student: ParamSet, batch: Batch, cfg: TrainConfig):
    """One student SGD step. Returns ``(LossBundle, teacher soft targets or None)``."""
    if len(batch) == 0:
        raise DataError("empty course batch")
    student.zero_grad()
    if cfg.mode == "ft" or teacher is None:
        l_ce = losses.ce_from_logits(batch.y, models.forward(student, batch.x))
        l_ce.backward()
        models.sgd_step(student, cfg.alpha)
        return LossBundle(l_ce_s=l_ce.item(), l_stu=l_ce.item()), None

    y_t = soft_targets(teacher, batch.x, cfg)
    if cfg.mode == "kd":
        y_t = engine.detach(y_t)
    l_kd, l_ce, l_stu = student_objective(y_t, student, batch, cfg)
    l_stu.backward()
    models.sgd_step(student, cfg.alpha)
    # the KD term also reaches theta; that first-order path is not part of the
    # teacher objective, so its gradient is dropped here
    teacher.zero_grad()
    return LossBundle(l_kd=l_kd.item(), l_ce_s=l_ce.item(), l_stu=l_stu.item()), y_t.values.copy()


def compute_feedback(student: ParamSet, course: Batch, exam: Batch, cfg: TrainConfig) -> FeedbackVector:
    """Feedback at the current (pre-course-step) student parameters.

    Costs one backward pass for the exam loss plus one per (course sample, class).
    """
    n = len(course)
    c = student.spec.num_classes
    if n * c + 1 > cfg.max_feedback_passes:
        raise ConfigError(
            f"feedback needs {n * c + 1} backward passes, budget is {cfg.max_feedback_passes}; "
            "use a smaller course batch"
        )
    params = list(student)
    g_meta = _flat(engine.grad(meta_loss(student, exam), params))
    log_p = engine.log_softmax_rows(models.forward(student, course.x), student_temperature(cfg))
    fb = np.empty((n, c))
    for i in range(n):
        for j in range(c):
            g_ij = _flat(engine.grad(log_p[i, j], params))
            fb[i, j] = cfg.alpha * float(g_meta @ g_ij)
    return FeedbackVector(fb)


def surrogate_gradient(teacher: ParamSet, fb: FeedbackVector, course: Batch, cfg: TrainConfig) -> np.ndarray:
    """Flat theta-gradient of the surrogate (first-order meta-gradient), leaving ``.grad`` alone."""
    return _flat(engine.grad(surrogate(teacher, fb, course, cfg), list(teacher)))


def approx_meta_gradient(teacher, student, course, exam, cfg) -> np.ndarray:
    return surrogate_gradient(teacher, compute_feedback(student, course, exam, cfg), course, cfg)


def exam_step(teacher: ParamSet, fb: FeedbackVector, course: Batch, cfg: TrainConfig, l_meta=None) -> LossBundle:
    """One teacher SGD step on ``gamma * surrogate + (1 - gamma) * CE``.

    ``l_meta`` (the exam loss of the already-updated student) is only used for
    the reported ``l_tea``; the gradient comes from the surrogate.
    """
    _check_detached(fb)
    teacher.zero_grad()
    s = surrogate(teacher, fb, course, cfg)
    l_ce_t = losses.ce_from_logits(course.y, models.forward(teacher, course.x))
    objective = engine.scale(s, cfg.gamma) + engine.scale(l_ce_t, 1.0 - cfg.gamma)
    objective.backward()
    models.sgd_step(teacher, cfg.beta)
    bundle = LossBundle(l_ce_t=l_ce_t.item())
    if l_meta is not None:
        bundle.l_meta = float(l_meta)
        bundle.l_tea = losses.teacher_loss(Tensor(l_meta), Tensor(l_ce_t.item()), cfg.gamma).item()
    return bundle


def summarize_feedback(fb: np.ndarray, targets) -> dict:
    mask = np.zeros(fb.shape, dtype=bool)
    mask[np.arange(fb.shape[0]), np.asarray(targets)] = True
    non = fb[~mask]
    return {
        "target_mean": float(fb[mask].mean()),
        "target_min": float(fb[mask].min()),
        "nontarget_mean": float(non.mean()) if non.size else None,
        "abs_mean": float(np.abs(fb).mean()),
    }


def run_training(cfg: TrainConfig, data: Dataset) -> TrainRun:
    if data is None or len(data) == 0:
        raise DataError("training needs a non-empty dataset")
    cfg.validate()
    student = models.init(cfg.student_spec(data), role="student")
    teacher = None
    if cfg.mode != "ft":
        teacher = models.init(cfg.teacher_spec(data), role="teacher")
        pretrain_teacher(teacher, data, cfg)

    per_epoch = steps_per_epoch(len(data), cfg.course_batch)
    history = []
    for step in range(cfg.epochs * per_epoch):
        course, exam = sample_batches(data, cfg.course_batch, cfg.exam_batch, cfg.seed, step)
        if cfg.exam_pairing == "course":
            exam = course
        fb = compute_feedback(student, course, exam, cfg) if cfg.mode == "ikd" else None

        bundle, y_t = course_step(teacher, student, course, cfg)
        exam_acc = models.accuracy(student, exam.x, exam.y)
        record = StepRecord(step, step // per_epoch, bundle, exam_acc=exam_acc, course_size=len(course))
        if y_t is not None:
            record.teacher_entropy_mean = float(losses.row_entropy(y_t).values.mean())

        if fb is not None:
            l_meta = meta_loss(student, exam).item()
            teacher_probs = soft_targets(teacher, course.x, cfg).values
            exam_bundle = exam_step(teacher, fb, course, cfg, l_meta=l_meta)
            bundle.l_meta, bundle.l_ce_t, bundle.l_tea = exam_bundle.l_meta, exam_bundle.l_ce_t, exam_bundle.l_tea
            bundle.l_ikd = bundle.l_stu + bundle.l_tea
            record.fb_summary = summarize_feedback(fb.values, course.y)
            record.fb = fb.values
            record.teacher_probs = teacher_probs
            record.targets = course.y.copy()
        history.append(record)
    return TrainRun(cfg, student, teacher, history, per_epoch, len(data))


def train(cfg: TrainConfig, data: Dataset) -> list:
    return run_training(cfg, data).history


def epoch_entropy(history) -> list:
    """Sample-weighted mean teacher entropy per epoch; ``None`` entries when no teacher."""
    by_epoch = {}
    for r in history:
        if r.teacher_entropy_mean is None:
            continue
        tot, n = by_epoch.get(r.epoch, (0.0, 0))
        by_epoch[r.epoch] = (tot + r.teacher_entropy_mean * r.course_size, n + r.course_size)
    return [tot / n for _, (tot, n) in sorted(by_epoch.items())]

