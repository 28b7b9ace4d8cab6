import numpy as np
import pytest
from hypothesis import given, strategies as st

from epkit import gflasso
from epkit.fusion import PoseFrame
from epkit.synth import gen_driver_session, gen_piecewise, rng


def test_differencing_matrix_first_order():
    q = gflasso.differencing_matrix(3, 1)
    assert np.array_equal(q, np.array([[-1.0, 0.0], [1.0, -1.0], [0.0, 1.0]]))


def test_differencing_matrix_second_order():
    q = gflasso.differencing_matrix(4, 2)
    v = rng(1).standard_normal((3, 4))
    vq = v @ q
    expected = v[:, 2:] - 2 * v[:, 1:-1] + v[:, :-2]
    assert np.allclose(vq, expected)


def test_differencing_matrix_annihilates_constants():
    q = gflasso.differencing_matrix(10, 1)
    assert np.allclose(np.ones(10) @ q, 0.0)


def test_differencing_matrix_rejects_bad_order():
    with pytest.raises(ValueError):
        gflasso.differencing_matrix(3, 3)


def test_solve_constant_signal_is_fixed_point():
    x = np.full((3, 7), 2.5)
    r = gflasso.solve(x, np.ones_like(x), gflasso.GflConfig(lam=5.0))
    assert np.abs(r.smoothed - x).max() <= 1e-9
    assert r.jump_strengths.max() <= 1e-9
    assert r.jump_strengths.shape == (6,)


def test_solve_huge_lambda_gives_row_means():
    x = np.array([[0.0, 1, 2, 3, 4, 5], [5, 3, 1, 1, 3, 5.0]])
    lam = 1e6 * np.linalg.norm(x)
    r = gflasso.solve(x, np.ones_like(x), gflasso.GflConfig(lam=lam))
    assert np.abs(r.smoothed - x.mean(axis=1, keepdims=True)).max() <= 1e-4
    assert r.jump_strengths.max() <= 1e-6


def test_solve_agrees_with_oracle_on_two_row_example():
    x = np.array([[0.0, 0, 0, 4, 4, 4], [1, 1, 1, -3, -3, -3.0]])
    w = np.ones_like(x)
    cfg = gflasso.GflConfig(lam=1.0)
    ra = gflasso.solve(x, w, cfg)
    ro = gflasso.oracle_solve(x, w, cfg)
    assert abs(ra.objective - ro.objective) <= 1e-6 * (1 + abs(ro.objective))
    # the only jump sits between frames 2 and 3
    assert int(np.argmax(ra.jump_strengths)) == 2


def test_solve_rejects_bad_weights():
    x = np.ones((2, 5))
    w = np.ones((2, 5))
    w[1] = 0.0
    with pytest.raises(ValueError, match="row 1"):
        gflasso.solve(x, w, gflasso.GflConfig(lam=1.0))
    with pytest.raises(ValueError):
        gflasso.solve(x, -np.ones((2, 5)), gflasso.GflConfig(lam=1.0))


def test_oracle_lambda_zero_returns_input():
    x = rng(4).standard_normal((2, 6))
    r = gflasso.oracle_solve(x, np.ones_like(x), gflasso.GflConfig(lam=0.0))
    assert np.array_equal(r.smoothed, x)


def test_oracle_one_dimensional_analytic_solution():
    # 1/2 (v1-0)^2 + 1/2 (v2-1)^2 + lam |v2-v1| with lam=0.4 -> (0.4, 0.6)
    r = gflasso.oracle_solve(
        np.array([[0.0, 1.0]]), np.ones((1, 2)), gflasso.GflConfig(lam=0.4)
    )
    assert np.allclose(r.smoothed, [[0.4, 0.6]], atol=1e-7)
    assert abs(r.jump_strengths[0] - 0.2) <= 1e-7


def test_oracle_rejects_large_instances_and_zero_weights():
    with pytest.raises(ValueError):
        gflasso.oracle_solve(
            np.ones((20, 20)), np.ones((20, 20)), gflasso.GflConfig(lam=1.0)
        )
    w = np.ones((1, 4))
    w[0, 2] = 0.0
    with pytest.raises(ValueError):
        gflasso.oracle_solve(np.ones((1, 4)), w, gflasso.GflConfig(lam=1.0))


def test_solve_oracle_agreement_random_instances():
    for i in range(12):
        g = rng(900 + i)
        d, t = int(g.integers(1, 4)), int(g.integers(2, 11))
        x = 2.0 * g.standard_normal((d, t))
        w = g.uniform(0.2, 1.0, size=(d, t))
        p = 1 if t < 4 else int(g.integers(1, 3))
        cfg = gflasso.GflConfig(lam=float(g.uniform(0.05, 2.0)), order=p)
        ra = gflasso.solve(x, w, cfg)
        ro = gflasso.oracle_solve(x, w, cfg)
        assert abs(ra.objective - ro.objective) <= 1e-6 * (1 + abs(ro.objective))


def test_time_reversal_symmetry():
    g = rng(55)
    x = g.standard_normal((3, 12))
    w = g.uniform(0.3, 1.0, size=(3, 12))
    cfg = gflasso.GflConfig(lam=0.7)
    fwd = gflasso.solve(x, w, cfg)
    rev = gflasso.solve(x[:, ::-1], w[:, ::-1], cfg)
    assert np.abs(fwd.jump_strengths - rev.jump_strengths[::-1]).max() <= 1e-6


def test_zero_weight_entries_never_matter():
    g = rng(66)
    x = g.standard_normal((3, 10))
    w = g.uniform(0.3, 1.0, size=(3, 10))
    w[1, 4] = 0.0
    w[2, 7] = 0.0
    cfg = gflasso.GflConfig(lam=0.8)
    base = gflasso.solve(x, w, cfg)
    x2 = x.copy()
    x2[1, 4] += 100.0
    x2[2, 7] -= 50.0
    perturbed = gflasso.solve(x2, w, cfg)
    assert np.abs(base.smoothed - perturbed.smoothed).max() <= 1e-8


def test_lambda_path_endpoints():
    g = rng(77)
    x = g.standard_normal((2, 8))
    w = np.ones_like(x)
    lo = gflasso.solve(x, w, gflasso.GflConfig(lam=0.0))
    assert np.abs(lo.smoothed - x).max() <= 1e-6
    hi = gflasso.solve(x, w, gflasso.GflConfig(lam=1e6 * np.linalg.norm(x)))
    assert hi.jump_strengths.max() <= 1e-8


def test_extract_change_points_examples():
    s = [0.1, 5.0, 0.2, 3.0]
    lab = gflasso.extract_change_points(s, 4.0, 1)
    assert lab.change_points == [1]
    lab2 = gflasso.extract_change_points(s, 2.0, 1)
    assert lab2.change_points == [1, 3]
    assert set(lab.change_points) <= set(lab2.change_points)
    lab3 = gflasso.extract_change_points([0.0, 0.0, 0.0], 0.0, 1)
    assert lab3.change_points == []
    assert lab3.group_ids == [0, 0, 0, 0]


def test_extract_change_points_group_ids():
    lab = gflasso.extract_change_points([0.1, 5.0, 0.2, 3.0], 2.0, 1)
    # boundaries after frames 1 and 3
    assert lab.group_ids == [0, 0, 1, 1, 2]


def test_extract_change_points_min_gap_and_ties():
    # equal strengths: earlier index wins under min_gap suppression
    lab = gflasso.extract_change_points([3.0, 0.0, 3.0], 1.0, 3)
    assert lab.change_points == [0]
    # higher strength wins regardless of position
    lab2 = gflasso.extract_change_points([2.0, 0.0, 5.0], 1.0, 3)
    assert lab2.change_points == [2]
    with pytest.raises(ValueError):
        gflasso.extract_change_points([1.0], 0.5, 0)


@given(st.integers(0, 2**32 - 1))
def test_threshold_nesting_property(seed):
    g = rng(seed)
    s = g.uniform(0.0, 4.0, size=int(g.integers(1, 40)))
    t1 = float(g.uniform(0.0, 4.0))
    t2 = float(g.uniform(0.0, t1)) if t1 > 0 else 0.0
    hi = set(gflasso.extract_change_points(s, t1, 1).change_points)
    lo = set(gflasso.extract_change_points(s, t2, 1).change_points)
    assert hi <= lo


def _pose_stream(values, scores):
    # values/scores: arrays (8, T) in ARM_SERIES row order
    frames = []
    t = values.shape[1]
    for i in range(t):
        joints = {}
        for row, (joint, axis) in enumerate(gflasso.ARM_SERIES):
            x, y, sc = joints.get(joint, (0.0, 0.0, 0.0))
            coord = values[row, i]
            if axis == 0:
                joints[joint] = (coord, y, scores[row, i])
            else:
                joints[joint] = (x, coord, scores[row, i])
        frames.append(PoseFrame(frame_index=i, joints=joints))
    return frames


def test_normalize_and_weight_constant_stream():
    vals = np.full((8, 5), 0.4)
    stream = _pose_stream(vals, np.ones((8, 5)))
    x, w = gflasso.normalize_and_weight(stream)
    assert np.array_equal(x, np.zeros((8, 5)))
    assert np.array_equal(w, np.ones((8, 5)))


def test_normalize_and_weight_zero_score_entries():
    g = rng(12)
    vals = g.uniform(0.1, 0.9, size=(8, 6))
    scores = np.ones((8, 6))
    scores[0, 2] = 0.0  # l_wrist x and y share the frame-2 score of that joint
    scores[1, 2] = 0.0
    stream = _pose_stream(vals, scores)
    x, w = gflasso.normalize_and_weight(stream)
    assert w[0, 2] == 0.0 and w[1, 2] == 0.0
    assert x[0, 2] == 0.0
    observed = np.delete(vals[0], 2)
    assert x[0, 0] == pytest.approx((vals[0, 0] - observed.mean()) / observed.std())


def test_normalize_and_weight_missing_joint_raises():
    frames = [
        PoseFrame(frame_index=i, joints={"l_wrist": (0.1, 0.2, 0.9)}) for i in range(4)
    ]
    with pytest.raises(ValueError, match="r_wrist"):
        gflasso.normalize_and_weight(frames)
    with pytest.raises(ValueError):
        gflasso.normalize_and_weight([])


def test_session_boundaries_recovered_end_to_end():
    bundle = gen_driver_session(
        [("safe_driving", 60), ("drinking", 60), ("texting_left", 60)],
        seed=5,
        render=False,
    )
    poses = [p for p, _h, _o in bundle.payload["frames"]]
    x, w = gflasso.normalize_and_weight(poses)
    r = gflasso.solve(x, w, gflasso.GflConfig(lam=3.0))
    lab = gflasso.extract_change_points(
        r.jump_strengths, 0.25 * r.jump_strengths.max(), 5, n_frames=len(poses)
    )
    for boundary in (59, 119):
        assert any(abs(c - boundary) <= 2 for c in lab.change_points), (
            boundary,
            lab.change_points,
        )
