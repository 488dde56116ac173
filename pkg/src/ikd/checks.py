"""Oracle suite behind ``ikd gradcheck`` and the acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ikd import engine, losses, models, oracles, trainer
from ikd.data import Batch, Dataset
from ikd.models import ModelSpec, ParamSet
from ikd.trainer import FeedbackVector, TrainConfig

LOSS_NAMES = ("l_kd", "l_ce_s", "l_stu", "l_ce_t", "surrogate")
META_ALPHAS = (1e-2, 1e-3, 1e-4)


@dataclass
class Instance:
    cfg: TrainConfig
    teacher: ParamSet
    student: ParamSet
    course: Batch
    exam: Batch
    fb: FeedbackVector


def _batch(rng, n, d, c):
    x = rng.standard_normal((n, d))
    y = rng.integers(0, c, size=n)
    return Batch(np.arange(n), x, y)


def random_instance(rng) -> Instance:
    d, c = int(rng.integers(2, 5)), int(rng.integers(2, 5))
    n, m = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    student_arch = "mlp" if rng.random() < 0.5 else "linear"
    teacher_arch = "mlp" if student_arch == "mlp" or rng.random() < 0.5 else "linear"
    cfg = TrainConfig(
        alpha=float(rng.uniform(0.01, 0.5)),
        lam=float(rng.uniform(0, 1)),
        gamma=float(rng.uniform(0, 1)),
        temperature=float(rng.uniform(0.5, 3.0)),
        temper_student=bool(rng.random() < 0.5),
        course_batch=n,
        exam_batch=m,
        teacher_arch=teacher_arch,
        teacher_hidden=4,
        student_arch=student_arch,
        student_hidden=3,
        init_scale=float(rng.uniform(0.3, 1.0)),
        seed=int(rng.integers(0, 2**31)),
    )
    dummy = Dataset(np.zeros((1, d)), np.zeros(1, dtype=int) + c - 1, c)
    teacher = models.init(cfg.teacher_spec(dummy), role="teacher")
    student = models.init(cfg.student_spec(dummy), role="student")
    # non-zero biases so every coordinate is exercised
    for ps in (teacher, student):
        for name, t in ps.items():
            if name.startswith("b"):
                t.values = rng.uniform(-0.5, 0.5, size=t.shape)
    fb = FeedbackVector(rng.standard_normal((n, c)) * cfg.alpha)
    return Instance(cfg, teacher, student, _batch(rng, n, d, c), _batch(rng, m, d, c), fb)


def loss_functions(inst: Instance):
    """``name -> (scalar builder, [ParamSets to differentiate])``."""
    cfg, course = inst.cfg, inst.course

    def parts():
        y_t = trainer.soft_targets(inst.teacher, course.x, cfg)
        return trainer.student_objective(y_t, inst.student, course, cfg)

    return {
        "l_kd": (lambda: parts()[0], [inst.student, inst.teacher]),
        "l_ce_s": (lambda: parts()[1], [inst.student]),
        "l_stu": (lambda: parts()[2], [inst.student, inst.teacher]),
        "l_ce_t": (
            lambda: losses.ce_from_logits(course.y, models.forward(inst.teacher, course.x)),
            [inst.teacher],
        ),
        "surrogate": (lambda: trainer.surrogate(inst.teacher, inst.fb, course, cfg), [inst.teacher]),
    }


def engine_vs_fd(build, paramsets, eps=oracles.FD_EPS) -> float:
    """Worst per-coordinate relative error between engine backward and central differences."""
    worst = 0.0
    for ps in paramsets:
        analytic = np.concatenate(engine.grad(build(), list(ps)), axis=None)
        numeric = oracles.fd_gradient(lambda _: build().item(), ps, eps)
        worst = max(worst, oracles.compare(analytic, numeric, eps).max_rel_err)
    return worst


def check_loss_gradients(n_instances=100, seed=0, eps=oracles.FD_EPS) -> dict:
    rng = np.random.default_rng(seed)
    worst = {name: 0.0 for name in LOSS_NAMES}
    for _ in range(n_instances):
        inst = random_instance(rng)
        for name, (build, paramsets) in loss_functions(inst).items():
            worst[name] = max(worst[name], engine_vs_fd(build, paramsets, eps))
    return worst


def same_sample_identity_error(inst: Instance) -> float:
    """Relative gap between fb at the target and ``-alpha * |grad log y^S_c|^2`` for one sample."""
    cfg = trainer.TrainConfig(**{**inst.cfg.to_dict(), "course_batch": 1, "exam_batch": 1, "temper_student": False})
    sample = Batch(np.arange(1), inst.course.x[:1], inst.course.y[:1])
    fb = trainer.compute_feedback(inst.student, sample, sample, cfg).values
    c = int(sample.y[0])
    if inst.student.spec.architecture == "linear":
        g = oracles.linear_log_prob_grad(inst.student["W"].values, inst.student["b"].values, sample.x[0], c)
    else:
        log_p = engine.log_softmax_rows(models.forward(inst.student, sample.x))
        g = np.concatenate(engine.grad(log_p[0, c], list(inst.student)), axis=None)
    expected = -cfg.alpha * float(g @ g)
    return abs(fb[0, c] - expected) / max(abs(expected), 1e-300)


def check_same_sample_identity(n_instances=50, seed=1) -> dict:
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(n_instances):
        inst = random_instance(rng)
        errs.append(same_sample_identity_error(inst))
    return {"max_rel_err": float(max(errs)), "n": n_instances}


def meta_pair(seed=0, alpha=1e-3, d=5, c=3, n=4, m=4):
    """Linear teacher (d, C) and linear student with random batches."""
    rng = np.random.default_rng(seed)
    cfg = TrainConfig(alpha=alpha, teacher_arch="linear", student_arch="linear", init_scale=0.5, seed=seed)
    spec_t = ModelSpec("linear", d, c, init_scale=0.5, seed=seed * 2 + 1)
    spec_s = ModelSpec("linear", d, c, init_scale=0.5, seed=seed * 2 + 2)
    teacher = models.init(spec_t, role="teacher")
    student = models.init(spec_s, role="student")
    return cfg, teacher, student, _batch(rng, n, d, c), _batch(rng, m, d, c)


def check_meta_approximation(seed=0, alphas=META_ALPHAS) -> dict:
    rows = []
    for alpha in alphas:
        cfg, teacher, student, course, exam = meta_pair(seed, alpha)
        exact = oracles.exact_meta_gradient_fd(teacher, student, course, exam, cfg)
        approx = trainer.approx_meta_gradient(teacher, student, course, exam, cfg)
        rep = oracles.compare(exact, approx, oracles.META_FD_EPS)
        rows.append({"alpha": alpha, "cosine": rep.cosine, "rel_err": rep.rel_norm_err})
    errs = [r["rel_err"] for r in rows]
    return {"rows": rows, "monotone": all(b <= a for a, b in zip(errs, errs[1:]))}


def run_suite(eps=oracles.FD_EPS, tol=1e-5, n_instances=100, seed=0) -> dict:
    checks = []
    grads = check_loss_gradients(n_instances, seed, eps)
    for name, err in grads.items():
        checks.append({"name": f"fd:{name}", "max_rel_err": err, "tol": tol, "passed": err < tol})
    ident = check_same_sample_identity(max(1, n_instances // 2), seed + 1)
    checks.append(
        {"name": "same_sample_feedback", "max_rel_err": ident["max_rel_err"], "tol": 1e-10,
         "passed": ident["max_rel_err"] < 1e-10}
    )
    meta = check_meta_approximation(seed)
    at_1e3 = next(r for r in meta["rows"] if r["alpha"] == 1e-3)
    checks.append({"name": "meta_cosine@1e-3", "cosine": at_1e3["cosine"], "min": 0.99,
                   "passed": at_1e3["cosine"] >= 0.99})
    checks.append({"name": "meta_error_monotone", "rows": meta["rows"], "passed": meta["monotone"]})
    return {"eps": eps, "passed": all(c["passed"] for c in checks), "checks": checks}

