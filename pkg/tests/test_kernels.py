import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from convbki.kernels import (
    VARIANTS,
    KernelParams,
    KernelTruncationWarning,
    build_filter,
    filter_grads,
    load_params,
    save_params,
    sparse_kernel,
    sparse_kernel_grad_l,
)

# frozen from a 30-digit mpmath evaluation of the closed form
K_02_05 = 0.331745529503874418500833223179
K_EDGE = 0.0930906449079732132697592737405  # d = 0.2 * sqrt(2), l = 0.5
K_CORNER = 0.0197924068566111215612030093731  # d = 0.2 * sqrt(3), l = 0.5
DK_DL_025_05 = 4.0 / 3.0


@pytest.fixture(autouse=True)
def _quiet_truncation():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", KernelTruncationWarning)
        yield


def random_params(rng, variant, C, lo=0.15, hi=0.8):
    n = {"single": 1, "perclass": C, "compound": 2 * C}[variant]
    return KernelParams(variant, rng.uniform(lo, hi, n), C)


@pytest.mark.parametrize(
    "d, l, expected",
    [(0.0, 0.5, 1.0), (0.5, 0.5, 0.0), (0.25, 0.5, 1 / 6), (0.2, 0.5, K_02_05)],
)
def test_sparse_kernel_values(d, l, expected):
    assert sparse_kernel(d, l) == pytest.approx(expected, abs=1e-14)


def test_sparse_kernel_domain():
    with pytest.raises(ValueError):
        sparse_kernel(0.1, 0.0)
    with pytest.raises(ValueError):
        sparse_kernel(-0.1, 0.5)
    with pytest.raises(ValueError):
        sparse_kernel_grad_l(0.1, -1.0)


def test_grad_l_examples():
    assert sparse_kernel_grad_l(0.0, 0.5) == 0.0
    assert sparse_kernel_grad_l(0.6, 0.5) == 0.0
    assert sparse_kernel_grad_l(0.25, 0.5) == pytest.approx(DK_DL_025_05, rel=1e-12)
    h = 1e-6
    fd = (sparse_kernel(0.25, 0.5 + h) - sparse_kernel(0.25, 0.5 - h)) / (2 * h)
    assert sparse_kernel_grad_l(0.25, 0.5) == pytest.approx(fd, rel=1e-5)


def test_grad_l_continuous_at_boundary():
    assert sparse_kernel_grad_l(0.5, 0.5) == pytest.approx(0.0, abs=1e-15)
    assert abs(sparse_kernel_grad_l(0.4999999, 0.5)) < 1e-9


def test_kernel_axioms_random():
    rng = np.random.default_rng(0)
    l = rng.uniform(0.01, 5.0, 10_000)
    d = rng.uniform(0, 2, 10_000) * l
    k = sparse_kernel(d, l)
    assert np.all((k >= 0) & (k <= 1))
    assert np.all(sparse_kernel(np.zeros_like(l), l) == 1.0)
    assert np.all(k[d >= l] == 0.0)


def test_kernel_monotone():
    d = np.linspace(0, 0.5, 1000)
    k = sparse_kernel(d, 0.5)
    assert np.all(np.diff(k) <= 1e-15)


@given(
    d=st.floats(0, 10, allow_nan=False),
    l=st.floats(1e-3, 10, allow_nan=False),
    a=st.floats(1e-2, 100, allow_nan=False),
)
def test_kernel_scale_invariance(d, l, a):
    assert sparse_kernel(a * d, a * l) == pytest.approx(sparse_kernel(d, l), abs=1e-12)


def test_build_filter_single():
    kf = build_filter(KernelParams("single", [0.5], 2), 3, 0.2, 2)
    w = kf.weights
    assert w.shape == (2, 3, 3, 3)
    for c in range(2):
        assert w[c, 1, 1, 1] == 1.0
        assert w[c, 0, 1, 1] == pytest.approx(K_02_05, abs=1e-12)
        assert w[c, 1, 2, 1] == pytest.approx(K_02_05, abs=1e-12)
        assert w[c, 0, 0, 1] == pytest.approx(K_EDGE, abs=1e-12)
        assert w[c, 0, 2, 0] == pytest.approx(K_CORNER, abs=1e-12)


def test_build_filter_size_one():
    for variant in VARIANTS:
        kf = build_filter(KernelParams.uniform(variant, 3, 0.1), 1, 0.2, 3)
        assert kf.weights.shape == (3, 1, 1, 1)
        assert np.all(kf.weights == 1.0)


def test_build_filter_compound():
    params = KernelParams("compound", [0.5, 0.2], 1)
    w = build_filter(params, 3, 0.2, 1).weights[0]
    assert w[1, 1, 0] == 0.0  # purely vertical neighbour
    assert w[1, 1, 2] == 0.0
    assert w[0, 1, 1] == pytest.approx(K_02_05, abs=1e-12)  # purely horizontal


def test_build_filter_rejects():
    with pytest.raises(ValueError):
        build_filter(KernelParams.uniform("single", 2), 4, 0.2, 2)
    with pytest.raises(ValueError):
        build_filter(KernelParams.uniform("perclass", 3), 3, 0.2, 2)
    with pytest.raises(ValueError):
        KernelParams("compound", [0.5, 0.5, 0.5], 2)
    with pytest.raises(ValueError):
        KernelParams("perclass", [0.5, -0.1], 2)


def test_truncation_warning():
    with pytest.warns(KernelTruncationWarning):
        build_filter(KernelParams.uniform("single", 1, 2.0), 3, 0.2, 1)


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("f", [1, 3, 5])
def test_filter_invariants(variant, f):
    rng = np.random.default_rng(f)
    C = 4
    w = build_filter(random_params(rng, variant, C), f, 0.2, C).weights
    h = (f - 1) // 2
    assert np.all((w >= 0) & (w <= 1))
    assert np.all(w[:, h, h, h] == 1.0)
    np.testing.assert_array_equal(w, w[:, ::-1, ::-1, ::-1])
    np.testing.assert_array_equal(w, w[:, ::-1, :, :])
    np.testing.assert_array_equal(w, w[:, :, ::-1, :])
    np.testing.assert_array_equal(w, w[:, :, :, ::-1])


def test_filter_is_read_only():
    kf = build_filter(KernelParams.uniform("single", 2), 3, 0.2, 2)
    with pytest.raises(ValueError):
        kf.weights[0, 0, 0, 0] = 0.5


def test_filter_grads_trivial_entries():
    g = filter_grads(KernelParams("single", [0.5], 2), 3, 0.2, 2)
    assert np.all(g[:, :, 1, 1, 1] == 0)
    gc = filter_grads(KernelParams("compound", [0.5, 0.3], 1), 3, 0.2, 1)
    assert gc[0, 0, 1, 1, 0] == 0.0  # d/dl_h at a purely vertical offset


def fd_filter_grads(params, f, dr, C, step=1e-6):
    x = params.flat()
    out = []
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        wp = build_filter(params.with_flat(xp), f, dr, C).weights
        wm = build_filter(params.with_flat(xm), f, dr, C).weights
        out.append((wp - wm) / (2 * step))
    return np.array(out)


@pytest.mark.parametrize("variant", VARIANTS)
def test_filter_grads_match_finite_differences(variant):
    rng = np.random.default_rng(7)
    C, f, dr = 3, 5, 0.2
    for _ in range(5):
        params = random_params(rng, variant, C)
        analytic = filter_grads(params, f, dr, C)
        fd = fd_filter_grads(params, f, dr, C)
        big = np.abs(fd) > 1e-6
        assert np.all(np.abs(analytic - fd)[~big] <= 1e-8 + 1e-4 * np.abs(fd)[~big] + 1e-6)
        np.testing.assert_allclose(analytic[big], fd[big], rtol=1e-4)


@pytest.mark.parametrize("variant", VARIANTS)
def test_params_roundtrip(tmp_path, variant):
    rng = np.random.default_rng(3)
    params = random_params(rng, variant, 5)
    path = tmp_path / "params.txt"
    save_params(params, path, filter_size=5, resolution=0.2)
    loaded, f, res = load_params(path)
    assert loaded.variant == variant
    np.testing.assert_array_equal(loaded.lengths, params.lengths)
    assert (f, res) == (5, 0.2)


def test_params_file_layout(tmp_path):
    params = KernelParams("compound", [[0.1, 0.2], [0.3, 0.4]], 2)
    path = tmp_path / "p.txt"
    save_params(params, path)
    text = path.read_text()
    assert "variant=compound" in text
    assert "lengths=0.1,0.2,0.3,0.4" in text


def test_params_unknown_key(tmp_path):
    path = tmp_path / "p.txt"
    path.write_text("variant=single\nnum_classes=2\nlengths=0.5\ncolour=red\n")
    with pytest.raises(ValueError, match="unknown key"):
        load_params(path)


def test_sigma0_is_one():
    assert KernelParams.uniform("perclass", 3).sigma0 == 1.0
    assert math.isclose(sparse_kernel(0.0, 0.123), 1.0)
