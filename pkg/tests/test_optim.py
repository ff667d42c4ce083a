import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afbench.errors import ArgumentError, FormatError, IoError, ShapeError
from afbench.optim import (
    OptimState,
    adam_step,
    finite_diff_check,
    finite_diff_errors,
    load_arrays,
    one_cycle_lr,
    save_arrays,
)


def test_adam_first_step():
    theta = {"w": np.array([1.0])}
    adam_step(theta, {"w": np.array([1.0])}, OptimState(), lr=0.1)
    assert theta["w"][0] == pytest.approx(0.9, abs=1e-8)


def test_adam_first_step_is_sign_times_lr():
    # bias correction makes the first update lr * g / |g| whatever the scale
    theta = {"w": np.array([0.0, 0.0, 0.0])}
    adam_step(theta, {"w": np.array([1e-3, -50.0, 2.0])}, OptimState(), lr=0.01)
    assert np.allclose(theta["w"], [-0.01, 0.01, -0.01], rtol=1e-4)


def test_adam_zero_gradient_keeps_parameters():
    theta = {"w": np.array([3.0, -1.0])}
    state = OptimState()
    for _ in range(5):
        adam_step(theta, {"w": np.zeros(2)}, state, lr=0.1)
    assert np.array_equal(theta["w"], [3.0, -1.0])
    assert state.step == 5


def test_adam_minimizes_a_quadratic():
    target = np.array([1.0, -2.0, 0.5])
    theta = {"w": np.zeros(3)}
    state = OptimState()
    for _ in range(2000):
        adam_step(theta, {"w": 2.0 * (theta["w"] - target)}, state, lr=0.01)
    assert np.abs(theta["w"] - target).max() < 1e-3


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, OptimState(), lr=0.1)


def test_one_cycle_examples():
    total = 1000
    assert one_cycle_lr(0, total, 3e-3) == pytest.approx(3e-3 / 25, rel=1e-12)
    assert one_cycle_lr(300, total, 3e-3) == pytest.approx(3e-3, rel=1e-12)
    assert one_cycle_lr(total, total, 3e-3) == pytest.approx(3e-3 / 1e4, rel=1e-12)


def test_one_cycle_midpoints_are_cosine_averages():
    lo, hi, end = 1e-3 / 25, 1e-3, 1e-3 / 1e4
    assert one_cycle_lr(150, 1000, 1e-3) == pytest.approx((lo + hi) / 2, rel=1e-12)
    assert one_cycle_lr(650, 1000, 1e-3) == pytest.approx((hi + end) / 2, rel=1e-12)


def test_one_cycle_out_of_range():
    for step in (-1, 11):
        with pytest.raises(ArgumentError):
            one_cycle_lr(step, 10, 1e-3)


@settings(max_examples=100)
@given(st.integers(1, 5000), st.floats(1e-6, 1.0))
def test_one_cycle_shape(total, max_lr):
    lrs = np.array([one_cycle_lr(s, total, max_lr) for s in range(0, total + 1, max(1, total // 200))])
    assert np.all(lrs > 0) and lrs.max() <= max_lr * (1 + 1e-12)
    peak = int(np.argmax(lrs))
    assert np.all(np.diff(lrs[:peak + 1]) >= -1e-18)
    assert np.all(np.diff(lrs[peak:]) <= 1e-18)


def test_finite_differences_on_a_linear_loss():
    rng = np.random.default_rng(0)
    c = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=5)}
    params = {"a": rng.normal(size=(3, 4)), "b": rng.normal(size=5)}

    def loss(p):
        return sum(float((p[k] * c[k]).sum()) for k in p), dict(c)

    assert finite_diff_check(loss, params) < 1e-10


def test_finite_differences_catch_a_wrong_gradient():
    params = {"w": np.array([0.3, -0.7, 1.1])}

    def loss(p):
        w = p["w"]
        return float((w**2).sum()), {"w": 2.0 * w + np.array([0.0, 0.05, 0.0])}

    errs = finite_diff_errors(loss, params)
    assert errs["w"] > 1e-2


def test_finite_differences_accept_a_relu_kink():
    # the analytic one-sided derivative at an exact kink is accepted
    params = {"w": np.array([0.0, 0.5])}

    def loss(p):
        w = p["w"]
        return float(np.maximum(w, 0.0).sum()), {"w": (w > 0).astype(float)}

    assert finite_diff_check(loss, params) < 1e-8


def test_finite_differences_restore_parameters():
    w = np.array([0.25, 0.5])
    params = {"w": w}
    finite_diff_check(lambda p: (float((p["w"] ** 3).sum()), {"w": 3 * p["w"] ** 2}), params)
    assert np.array_equal(w, [0.25, 0.5])


def test_afp1_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    arrays = {"enc.w": rng.normal(size=(4, 8)), "bias": rng.normal(size=8),
              "scalar": np.array(2.5), "empty": np.zeros((0, 3))}
    path = tmp_path / "m.afp"
    save_arrays(path, arrays)
    back = load_arrays(path)
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].shape == arrays[k].shape
        assert back[k].tobytes() == arrays[k].tobytes()


def test_afp1_layout(tmp_path):
    path = tmp_path / "m.afp"
    save_arrays(path, {"x": np.array([1.0, 2.0])})
    raw = path.read_bytes()
    assert raw[:4] == b"AFP1"
    assert struct.unpack_from("<II", raw, 4) == (1, 1)
    assert raw[12:13] == b"x"
    assert struct.unpack_from("<II", raw, 13) == (1, 2)
    assert struct.unpack_from("<2d", raw, 21) == (1.0, 2.0)
    assert len(raw) == 37


@pytest.mark.parametrize("mutate", [
    lambda raw: b"AFP2" + raw[4:],
    lambda raw: raw[:-3],
    lambda raw: raw[:10],
    lambda raw: raw + b"\0",
])
def test_afp1_corruption(tmp_path, mutate):
    path = tmp_path / "m.afp"
    save_arrays(path, {"w": np.ones((2, 2))})
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(FormatError):
        load_arrays(path)


def test_afp1_missing_file(tmp_path):
    with pytest.raises(IoError):
        load_arrays(tmp_path / "nope.afp")
