import numpy as np
import pytest

from convbki.synth import CLASS_NAMES, POLE, SynthConfig, flip_labels, synth_scene


def test_deterministic():
    a = synth_scene(3, SynthConfig(num_frames=4, points_per_frame=500))
    b = synth_scene(3, SynthConfig(num_frames=4, points_per_frame=500))
    for x, y in zip(a, b):
        assert x.positions.tobytes() == y.positions.tobytes()
        assert x.noisy.tobytes() == y.noisy.tobytes()
        assert x.pose.tobytes() == y.pose.tobytes()


def test_seed_changes_output():
    a = synth_scene(0, SynthConfig(num_frames=1, points_per_frame=200))
    b = synth_scene(1, SynthConfig(num_frames=1, points_per_frame=200))
    assert not np.array_equal(a[0].positions, b[0].positions)


def test_no_noise():
    for fr in synth_scene(0, SynthConfig(num_frames=3, flip_prob=0.0, points_per_frame=500)):
        np.testing.assert_array_equal(fr.noisy, fr.gt)


def test_flip_rate():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 4, 100_000)
    noisy = flip_labels(rng, labels, 4, 0.3)
    assert abs(np.mean(noisy != labels) - 0.3) <= 0.01
    # flips land uniformly on the wrong classes
    wrong = noisy[(noisy != labels) & (labels == 0)]
    counts = np.bincount(wrong, minlength=4)[1:]
    assert counts.min() / counts.max() > 0.9


def test_scene_flip_rate():
    frames = synth_scene(5, SynthConfig(num_frames=30, points_per_frame=4000))
    gt = np.concatenate([f.gt for f in frames])
    noisy = np.concatenate([f.noisy for f in frames])
    assert len(gt) >= 100_000
    assert abs(np.mean(gt != noisy) - 0.3) <= 0.01


def test_rejects_flip_prob():
    with pytest.raises(ValueError):
        SynthConfig(flip_prob=1.0)
    with pytest.raises(ValueError):
        SynthConfig(flip_prob=-0.1)


def test_geometry():
    cfg = SynthConfig(num_frames=6, points_per_frame=3000, position_noise=0.0)
    frames = synth_scene(1, cfg)
    for t, fr in enumerate(frames):
        np.testing.assert_array_equal(fr.pose[:3, 3], [t * cfg.speed, 0, 0])
        assert np.all(np.linalg.norm(fr.positions[:, :2], axis=1) <= cfg.sensor_range + 1e-9)
        ground = fr.positions[fr.gt == 0]
        np.testing.assert_allclose(ground[:, 2], cfg.ground_z)
        walls = fr.positions[fr.gt == 2]
        np.testing.assert_allclose(np.abs(walls[:, 1]), cfg.road_half_width)
        assert set(np.unique(fr.gt)) <= set(range(len(CLASS_NAMES)))
    assert any((f.gt == POLE).any() for f in frames)


def test_soft_labels():
    frames = synth_scene(2, SynthConfig(num_frames=2, points_per_frame=300, label_mode="soft"))
    y = frames[0].noisy
    assert y.shape == (len(frames[0].gt), 4)
    np.testing.assert_allclose(y.sum(axis=1), 1.0)
    assert np.all(y.max(axis=1) == pytest.approx(0.7))
