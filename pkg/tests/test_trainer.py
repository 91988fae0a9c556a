import math
import warnings

import numpy as np
import pytest

from convbki.kernels import VARIANTS, KernelParams, KernelTruncationWarning, build_filter, filter_grads
from convbki.trainer import (
    Adam,
    TrainConfig,
    TrainingError,
    aggregate_frames,
    default_length_bounds,
    inverse_frequency_weights,
    loss_and_grad,
    loss_curve_to_csv,
    make_sample,
    nll_loss,
    train,
)
from convbki.update import bayesian_update
from convbki.voxel import GridSpec, LocalGrid


@pytest.fixture(autouse=True)
def _quiet_truncation():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", KernelTruncationWarning)
        yield


def small_sample(rng, C=3, n=40, span=0.6, res=0.2):
    spec = GridSpec([-span] * 3, [span] * 3, res, C)
    pts = rng.uniform(-span, span, (n, 3))
    frames = [(pts[: n // 2], rng.integers(0, C, n // 2), np.eye(4)),
              (pts[n // 2:], rng.integers(0, C, n - n // 2), np.eye(4))]
    gt = rng.uniform(-span, span, (25, 3))
    return make_sample(frames, np.eye(4), gt, rng.integers(0, C, 25), spec, prior=0.05)


def random_params(rng, variant, C):
    n = {"single": 1, "perclass": C, "compound": 2 * C}[variant]
    return KernelParams(variant, rng.uniform(0.15, 0.6, n), C)


def reference_loss(params, sample, f, w):
    kf = build_filter(params, f, sample.grid.spec.resolution, sample.grid.spec.num_classes)
    post = bayesian_update(sample.grid, sample.inputs, kf)
    return nll_loss(post, sample.gt_positions, sample.gt_classes, w).loss


def test_aggregate_identity():
    pts = np.random.default_rng(0).normal(size=(5, 3))
    out, lab = aggregate_frames([(pts, [0] * 5, np.eye(4))], np.eye(4))
    np.testing.assert_array_equal(out, pts)


def test_aggregate_rotation():
    target = np.eye(4)
    target[:2, :2] = [[0, 1], [-1, 0]]  # target frame yawed by -90 degrees
    out, _ = aggregate_frames([([[1.0, 0, 0]], [0], np.eye(4))], target)
    np.testing.assert_allclose(out, [[0, 1, 0]], atol=1e-12)


def test_uniform_alpha_loss():
    spec = GridSpec([0, 0, 0], [1, 1, 1], 0.2, 4)
    grid = LocalGrid(np.full(spec.shape, 0.7), spec, (0, 0, 0))
    pts = np.random.default_rng(1).uniform(0, 1, (30, 3))
    res = nll_loss(grid, pts, np.arange(30) % 4, np.ones(4))
    assert res.loss == pytest.approx(30 * math.log(4), rel=1e-12)
    assert res.evaluated == 30 and res.skipped == 0


def test_confident_voxel_loss_vanishes():
    spec = GridSpec([0, 0, 0], [0.2, 0.2, 0.2], 0.2, 2)
    grid = LocalGrid(np.array([1e9, 1e-3]).reshape(2, 1, 1, 1), spec, (0, 0, 0))
    assert nll_loss(grid, [[0.1, 0.1, 0.1]], [0], np.ones(2)).loss < 1e-9


def test_loss_skips_out_of_bounds_and_rejects_invalid():
    spec = GridSpec([0, 0, 0], [0.4, 0.4, 0.4], 0.2, 2)
    grid = LocalGrid.filled(spec)
    res = nll_loss(grid, [[0.1, 0.1, 0.1], [5, 5, 5]], [0, 1], np.ones(2))
    assert res.skipped == 1 and res.evaluated == 1
    grid.alpha[0, 0, 0, 0] = 0.0
    with pytest.raises(ValueError):
        nll_loss(grid, [[0.1, 0.1, 0.1]], [0], np.ones(2))


def test_loss_permutation_invariant():
    rng = np.random.default_rng(2)
    s = small_sample(rng)
    w = np.array([1.0, 2.0, 0.5])
    p = KernelParams.uniform("perclass", 3, 0.4)
    kf = build_filter(p, 3, 0.2, 3)
    post = bayesian_update(s.grid, s.inputs, kf)
    perm = rng.permutation(len(s.gt_classes))
    a = nll_loss(post, s.gt_positions, s.gt_classes, w).loss
    b = nll_loss(post, s.gt_positions[perm], s.gt_classes[perm], w).loss
    assert a == pytest.approx(b, rel=1e-12)


def test_single_voxel_gradient():
    # two classes, one observation, the gt point one cell away
    spec = GridSpec([0, 0, 0], [0.6, 0.2, 0.2], 0.2, 2)
    s = make_sample([([[0.1, 0.1, 0.1]], [1], np.eye(4))], np.eye(4), [[0.3, 0.1, 0.1]], [1], spec, prior=0.1)
    params = KernelParams("single", [0.45], 2)
    _, g = loss_and_grad(params, s, 3, np.ones(2))
    h = 1e-5 * 0.45
    fd = (reference_loss(params.with_flat([0.45 + h]), s, 3, np.ones(2))
          - reference_loss(params.with_flat([0.45 - h]), s, 3, np.ones(2))) / (2 * h)
    assert g[0] == pytest.approx(fd, rel=1e-4)


@pytest.mark.parametrize("variant", VARIANTS)
def test_end_to_end_gradient(variant):
    rng = np.random.default_rng(10)
    w = np.array([0.7, 1.5, 0.8])
    for _ in range(5):
        s = small_sample(rng)
        params = random_params(rng, variant, 3)
        loss, g = loss_and_grad(params, s, 5, w)
        assert loss == pytest.approx(reference_loss(params, s, 5, w), rel=1e-10)
        x = params.flat()
        for i in range(x.size):
            h = 1e-5 * x[i]
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            fd = (reference_loss(params.with_flat(xp), s, 5, w) - reference_loss(params.with_flat(xm), s, 5, w)) / (2 * h)
            assert g[i] == pytest.approx(fd, rel=1e-3, abs=1e-7)


def test_filter_gradient_from_nll():
    rng = np.random.default_rng(3)
    s = small_sample(rng)
    params = random_params(rng, "compound", 3)
    w = np.ones(3)
    kf = build_filter(params, 3, 0.2, 3)
    res = nll_loss(bayesian_update(s.grid, s.inputs, kf), s.gt_positions, s.gt_classes, w,
                   inputs=s.inputs, filter_size=3)
    _, g = loss_and_grad(params, s, 3, w)
    np.testing.assert_allclose(np.tensordot(filter_grads(params, 3, 0.2, 3), res.filter_grad, axes=4), g,
                               rtol=1e-10, atol=1e-12)


def test_inverse_frequency_weights():
    w = inverse_frequency_weights([0, 0, 0, 1], 3)
    # 1/3 and 1/1, rescaled so the three weights average to 1
    np.testing.assert_allclose(w, [0.75, 2.25, 0.0])


def test_adam_first_step_is_lr_sized():
    x = Adam(0.01).step(np.array([1.0, 2.0]), np.array([3.0, -1e-3]))
    np.testing.assert_allclose(x, [0.99, 2.01], rtol=1e-6)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(frames_per_sample=0)
    with pytest.raises(ValueError):
        TrainConfig(length_bounds=(0.6, 0.9))


def test_zero_steps_returns_init():
    res = train([], TrainConfig(), "compound", 3, 5, 0.2)
    np.testing.assert_array_equal(res.params.lengths, np.full((3, 2), 0.5))
    assert res.losses == []


def test_bounds_hold_every_step():
    rng = np.random.default_rng(4)
    samples = [small_sample(rng) for _ in range(8)]
    cfg = TrainConfig(learning_rate=0.2, length_bounds=(0.3, 0.55), l_init=0.5)
    res = train(samples, cfg, "perclass", 3, 3, 0.2)
    hist = np.array(res.history)
    assert hist.min() >= 0.3 and hist.max() <= 0.55
    assert default_length_bounds(0.2, 5) == (0.01, pytest.approx(0.866, abs=1e-3))


def test_isolated_noiseless_voxels_keep_lengths():
    spec = GridSpec([-2, -2, -2], [2, 2, 2], 0.2, 3)
    centers = np.array([[-1.5, -1.5, -1.5], [0.1, 0.1, 0.1], [1.3, -0.9, 0.5], [-0.7, 1.5, 1.1]])
    cls = np.array([0, 1, 2, 1])
    pts = np.repeat(centers, 5, axis=0)
    lab = np.repeat(cls, 5)
    s = make_sample([(pts, lab, np.eye(4))], np.eye(4), centers, cls, spec)
    res = train([s] * 20, TrainConfig(), "compound", 3, 5, 0.2)
    assert np.max(np.abs(res.params.flat() - 0.5)) < 0.05


def test_non_finite_loss_names_sample():
    rng = np.random.default_rng(5)
    good = small_sample(rng)
    bad = small_sample(rng)
    bad.inputs[...] = np.nan
    with pytest.raises(TrainingError) as info:
        train([good, bad], TrainConfig(class_weights=np.ones(3)), "single", 3, 3, 0.2)
    assert info.value.sample_index == 1


def test_loss_curve_csv(tmp_path):
    rng = np.random.default_rng(6)
    res = train([small_sample(rng) for _ in range(3)], TrainConfig(), "single", 3, 3, 0.2)
    p = tmp_path / "loss.csv"
    loss_curve_to_csv(res, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "step,loss,l0"
    assert len(lines) == 4
