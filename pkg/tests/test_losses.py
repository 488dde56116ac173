import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import fd_check, leaf
from ikd import engine, losses
from ikd.engine import Tensor
from ikd.errors import ConfigError, DataError, DomainError
from ikd.losses import LossBundle


def test_kd_identical_distributions_is_zero():
    y = Tensor([[0.2, 0.3, 0.5], [0.9, 0.05, 0.05]])
    assert losses.kd_loss(y, y).item() == 0.0


def test_kd_reference_value():
    expected = 0.9 * math.log(1.8) + 0.1 * math.log(0.2)
    got = losses.kd_loss(Tensor([[0.9, 0.1]]), Tensor([[0.5, 0.5]])).item()
    assert got == pytest.approx(expected, rel=1e-14)
    assert got == pytest.approx(0.3681, abs=5e-5)


def test_kd_rejects_nonpositive_student_prob():
    with pytest.raises(DomainError):
        losses.kd_loss(Tensor([[0.5, 0.5]]), Tensor([[1.0, 0.0]]))


def test_kd_handles_zero_teacher_entries():
    assert losses.kd_loss(Tensor([[1.0, 0.0]]), Tensor([[0.5, 0.5]])).item() == pytest.approx(math.log(2))


def test_kd_student_grad_equals_soft_ce_grad(rng):
    # the teacher-entropy term does not depend on the student
    for _ in range(10):
        y_t = engine.softmax_rows(Tensor(rng.standard_normal((4, 3))))
        z = leaf(rng.standard_normal((4, 3)))
        (g_kl,) = engine.grad(losses.kd_loss(y_t, engine.softmax_rows(z)), [z])
        soft_ce = engine.scale((y_t * engine.log_softmax_rows(z)).sum(), -1 / 4)
        (g_ce,) = engine.grad(soft_ce, [z])
        np.testing.assert_allclose(g_kl, g_ce, atol=1e-10, rtol=0)


def test_kd_grads_match_fd_both_arguments(rng):
    for _ in range(20):
        a, b = leaf(rng.standard_normal((3, 4))), leaf(rng.standard_normal((3, 4)))
        build = lambda: losses.kd_loss(engine.softmax_rows(a, 1.3), engine.softmax_rows(b))
        assert fd_check(build, [a, b]) < 1e-5


@given(
    arrays(np.float64, (3, 4), elements=st.floats(-4, 4)),
    arrays(np.float64, (3, 4), elements=st.floats(-4, 4)),
)
def test_kd_nonnegative(za, zb):
    y_t, y_s = engine.softmax_rows(Tensor(za)), engine.softmax_rows(Tensor(zb))
    assert losses.kd_loss(y_t, y_s).item() >= -1e-15


def test_ce_reference_values():
    assert losses.ce_loss(np.array([[1.0, 0.0]]), Tensor([[1.0, 0.0]])).item() == 0.0
    assert losses.ce_loss(np.array([[1.0, 0.0]]), Tensor([[0.5, 0.5]])).item() == pytest.approx(math.log(2))
    assert losses.ce_loss(np.array([2, 0]), Tensor(np.full((2, 4), 0.25))).item() == pytest.approx(math.log(4))


def test_ce_from_logits_matches_ce_loss(rng):
    z = rng.standard_normal((5, 3))
    y = rng.integers(0, 3, 5)
    a = losses.ce_loss(losses.one_hot(y, 3), engine.softmax_rows(Tensor(z))).item()
    b = losses.ce_from_logits(y, z).item()
    assert a == pytest.approx(b, rel=1e-13)


@pytest.mark.parametrize("labels", [[0, 3], [-1, 0]])
def test_invalid_label_raises(labels):
    with pytest.raises(DataError):
        losses.ce_loss(np.array(labels), Tensor(np.full((2, 3), 1 / 3)))


def test_ce_rejects_non_one_hot_rows():
    with pytest.raises(DataError):
        losses.ce_loss(np.array([[0.5, 0.5]]), Tensor([[0.5, 0.5]]))


@pytest.mark.parametrize(
    "fn, a, b, w, expected",
    [
        (losses.student_loss, 0.4, 0.6, 0.0, 0.6),
        (losses.student_loss, 0.4, 0.6, 1.0, 0.4),
        (losses.student_loss, 0.4, 0.6, 0.5, 0.5),
        (losses.teacher_loss, 0.2, 0.8, 0.0, 0.8),
        (losses.teacher_loss, 0.2, 0.8, 1.0, 0.2),
        (losses.teacher_loss, 0.2, 0.8, 0.5, 0.5),
    ],
)
def test_mixes(fn, a, b, w, expected):
    out = fn(Tensor(a), Tensor(b), w).item()
    if w in (0.0, 1.0):
        assert out == expected
    else:
        assert out == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("w", [-0.1, 1.5])
def test_mix_weight_out_of_range(w):
    with pytest.raises(ConfigError):
        losses.student_loss(Tensor(0.1), Tensor(0.2), w)
    with pytest.raises(ConfigError):
        losses.teacher_loss(Tensor(0.1), Tensor(0.2), w)


def test_row_entropy_reference():
    h = losses.row_entropy(Tensor([[0.5, 0.5], [1.0, 0.0]])).values
    assert h[0] == pytest.approx(math.log(2))
    assert h[1] == 0.0


def test_row_entropy_grad_matches_fd(rng):
    z = leaf(rng.standard_normal((3, 4)))
    assert fd_check(lambda: losses.row_entropy(engine.softmax_rows(z)).sum(), [z]) < 1e-5


def test_bundle_identities():
    b = LossBundle(l_kd=0.3, l_ce_s=0.7, l_meta=0.2, l_ce_t=0.9)
    b.l_stu = 0.25 * 0.3 + 0.75 * 0.7
    b.l_tea = 0.6 * 0.2 + 0.4 * 0.9
    b.l_ikd = b.l_stu + b.l_tea
    res = b.identity_residuals(0.25, 0.6)
    assert all(v < 1e-12 for v in res.values())
    assert LossBundle(l_ce_s=1.0).identity_residuals(0.5, 0.5) == {"stu": None, "tea": None, "ikd": None}
