import numpy as np
import pytest

from unnfwi.errors import ArchitectureError, UsageError
from unnfwi.net import DESK, PAPER_FULL, NetArch, init_params, param_shapes, sample_noise, unet_backward, unet_forward
from unnfwi.net import ops


def _fd_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


rng = np.random.default_rng(42)


def test_conv_matches_naive_loops():
    x = rng.standard_normal((3, 6, 7))
    w = rng.standard_normal((2, 3, 3, 3))
    b = rng.standard_normal(2)
    out, _ = ops.conv2d(x, w, b)
    ref = np.zeros((2, 6, 7))
    for o in range(2):
        for i in range(6):
            for j in range(7):
                acc = b[o]
                for c in range(3):
                    for di in range(3):
                        for dj in range(3):
                            ii, jj = i + di - 1, j + dj - 1
                            if 0 <= ii < 6 and 0 <= jj < 7:
                                acc += w[o, c, di, dj] * x[c, ii, jj]
                ref[o, i, j] = acc
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_conv_backward_fd():
    x = rng.standard_normal((2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    r = rng.standard_normal((3, 5, 5))
    out, cache = ops.conv2d(x, w, b)
    dx, dw, db = ops.conv2d_backward(cache, r)
    loss = lambda: np.sum(r * ops.conv2d(x, w, b)[0])  # noqa: E731
    assert _rel(dx, _fd_grad(loss, x)) < 1e-4
    assert _rel(dw, _fd_grad(loss, w)) < 1e-4
    assert _rel(db, _fd_grad(loss, b)) < 1e-4


def test_channel_norm_backward_fd():
    x = rng.standard_normal((3, 6, 6)) * 2 + 1
    g = rng.standard_normal(3)
    be = rng.standard_normal(3)
    r = rng.standard_normal((3, 6, 6))
    out, cache = ops.channel_norm(x, g, be)
    dx, dg, db = ops.channel_norm_backward(cache, r)
    loss = lambda: np.sum(r * ops.channel_norm(x, g, be)[0])  # noqa: E731
    assert _rel(dx, _fd_grad(loss, x)) < 1e-4
    assert _rel(dg, _fd_grad(loss, g)) < 1e-4
    assert _rel(db, _fd_grad(loss, be)) < 1e-4
    # normalised output: zero mean, unit variance per channel (up to eps)
    xhat = (out - be[:, None, None]) / g[:, None, None]
    np.testing.assert_allclose(xhat.mean(axis=(1, 2)), 0, atol=1e-12)


def test_leaky_relu_backward_fd():
    x = rng.standard_normal((2, 8, 8))
    x = np.where(np.abs(x) < 1e-2, 0.5, x)  # keep away from the kink
    r = rng.standard_normal(x.shape)
    _, cache = ops.leaky_relu(x)
    dx = ops.leaky_relu_backward(cache, r)
    loss = lambda: np.sum(r * ops.leaky_relu(x)[0])  # noqa: E731
    assert _rel(dx, _fd_grad(loss, x)) < 1e-4
    assert ops.leaky_relu(np.array([-2.0]))[0][0] == pytest.approx(-0.02)


def test_maxpool_backward_fd_and_ties():
    x = rng.permutation(128).reshape(2, 8, 8).astype(float)  # distinct values
    r = rng.standard_normal((2, 4, 4))
    _, cache = ops.maxpool2(x)
    dx = ops.maxpool2_backward(cache, r)
    loss = lambda: np.sum(r * ops.maxpool2(x)[0])  # noqa: E731
    assert _rel(dx, _fd_grad(loss, x, eps=1e-3)) < 1e-4
    tie = np.ones((1, 2, 2))
    _, cache = ops.maxpool2(tie)
    routed = ops.maxpool2_backward(cache, np.ones((1, 1, 1)))
    assert routed[0].tolist() == [[1.0, 0.0], [0.0, 0.0]]


def test_upsample_backward_fd_and_convention():
    x = rng.standard_normal((2, 4, 4))
    r = rng.standard_normal((2, 8, 8))
    _, cache = ops.upsample2(x)
    dx = ops.upsample2_backward(cache, r)
    loss = lambda: np.sum(r * ops.upsample2(x)[0])  # noqa: E731
    assert _rel(dx, _fd_grad(loss, x)) < 1e-4
    # half-pixel centres: output 1 of [a, b] is 0.75 a + 0.25 b
    out, _ = ops.upsample2(np.array([[[0.0, 4.0]]]).transpose(0, 2, 1) @ np.ones((1, 1, 2)))
    np.testing.assert_allclose(out[0, :, 0], [0.0, 1.0, 3.0, 4.0])


def test_concat_backward_fd():
    a = rng.standard_normal((2, 4, 4))
    b = rng.standard_normal((3, 4, 4))
    r = rng.standard_normal((5, 4, 4))
    out, cache = ops.concat(a, b)
    da, db = ops.concat_backward(cache, r)
    loss = lambda: np.sum(r * ops.concat(a, b)[0])  # noqa: E731
    assert _rel(da, _fd_grad(loss, a)) < 1e-4
    assert _rel(db, _fd_grad(loss, b)) < 1e-4


def test_sigmoid_backward_fd_and_stability():
    x = rng.standard_normal((1, 8, 8)) * 3
    r = rng.standard_normal(x.shape)
    s, cache = ops.sigmoid(x)
    dx = ops.sigmoid_backward(cache, r)
    loss = lambda: np.sum(r * ops.sigmoid(x)[0])  # noqa: E731
    assert _rel(dx, _fd_grad(loss, x)) < 1e-4
    big, _ = ops.sigmoid(np.array([-800.0, 800.0]))
    assert np.all(np.isfinite(big)) and big[1] == 1.0


# -- whole network -----------------------------------------------------------------

def _naive_conv(x, w, b):
    c_out, c_in, k, _ = w.shape
    _, h, wd = x.shape
    p = k // 2
    out = np.zeros((c_out, h, wd))
    for o in range(c_out):
        for i in range(h):
            for j in range(wd):
                acc = b[o]
                for c in range(c_in):
                    for di in range(k):
                        for dj in range(k):
                            ii, jj = i + di - p, j + dj - p
                            if 0 <= ii < h and 0 <= jj < wd:
                                acc += w[o, c, di, dj] * x[c, ii, jj]
                out[o, i, j] = acc
    return out


def test_tiny_net_matches_direct_reimplementation():
    arch = NetArch(depth=1, base_filters=4)
    p = init_params(arch, seed=3)
    t = p.tensors
    for k in t:
        if k.endswith(".b") or k.endswith(".beta"):
            t[k] = rng.standard_normal(t[k].shape) * 0.1
    z = sample_noise(1, 8, arch)
    img, _ = unet_forward(p, z)
    x = z.z
    for i in (1, 2):
        x = _naive_conv(x, t[f"enc0.conv{i}.w"], t[f"enc0.conv{i}.b"])
        mu = x.mean(axis=(1, 2), keepdims=True)
        var = ((x - mu) ** 2).mean(axis=(1, 2), keepdims=True)
        x = t[f"enc0.norm{i}.gamma"][:, None, None] * (x - mu) / np.sqrt(var + 1e-5) + t[f"enc0.norm{i}.beta"][:, None, None]
        x = np.where(x > 0, x, 0.01 * x)
    x = _naive_conv(x, t["head.w"], t["head.b"])
    ref = 1 / (1 + np.exp(-x))
    np.testing.assert_allclose(img, ref, atol=1e-6)


def test_zero_params_give_half():
    arch = NetArch(depth=2, base_filters=4)
    p = init_params(arch, 0)
    for k, v in p.tensors.items():
        p.tensors[k] = np.ones_like(v) if k.endswith("gamma") else np.zeros_like(v)
    img, _ = unet_forward(p, sample_noise(0, 8, arch))
    assert np.all(img == 0.5)


@pytest.mark.parametrize("depth,width", [(1, 8), (2, 8), (3, 16), (3, 64)])
def test_output_shape_and_range(depth, width):
    arch = NetArch(depth=depth, base_filters=4)
    img, _ = unet_forward(init_params(arch, 1), sample_noise(2, width, arch))
    assert img.shape == (1, width, width)
    assert np.all((img > 0) & (img < 1))


def test_tiny_net_directional_fd():
    arch = NetArch(depth=2, base_filters=4)
    params = init_params(arch, seed=5)
    z = sample_noise(7, 8, arch)
    r = np.random.default_rng(11).standard_normal((1, 8, 8))
    img, tape = unet_forward(params, z)
    grads = unet_backward(tape, r, params)
    names = sorted(params.tensors)
    base = {k: v.copy() for k, v in params.tensors.items()}
    dirs = np.random.default_rng(12)
    eps = 1e-7
    for _ in range(10):
        p = {k: dirs.standard_normal(v.shape) for k, v in base.items()}
        inner = sum(np.sum(grads[k] * p[k]) for k in names)

        def loss(s):
            params.tensors = {k: base[k] + s * p[k] for k in names}
            params.bump()
            return float(np.sum(r * unet_forward(params, z)[0]))

        fd = (loss(eps) - loss(-eps)) / (2 * eps)
        assert abs(inner - fd) <= 1e-3 * abs(fd)
    params.tensors = base


def test_zero_upstream_gives_zero_grads():
    arch = NetArch(depth=2, base_filters=4)
    params = init_params(arch, 0)
    img, tape = unet_forward(params, sample_noise(0, 8, arch))
    grads = unet_backward(tape, np.zeros_like(img), params)
    assert set(grads) == set(params.tensors)
    assert all(np.all(g == 0) for g in grads.values())


def test_no_skip_variant_backprop():
    arch = NetArch(depth=2, base_filters=4, use_skip=False)
    params = init_params(arch, 2)
    z = sample_noise(1, 8, arch)
    r = np.random.default_rng(1).standard_normal((1, 8, 8))
    _, tape = unet_forward(params, z)
    g = unet_backward(tape, r, params)
    base = {k: v.copy() for k, v in params.tensors.items()}
    p = {k: np.random.default_rng(4).standard_normal(v.shape) for k, v in base.items()}

    def loss(s):
        params.tensors = {k: base[k] + s * p[k] for k in base}
        params.bump()
        return float(np.sum(r * unet_forward(params, z)[0]))

    eps = 1e-7
    fd = (loss(eps) - loss(-eps)) / (2 * eps)
    inner = sum(np.sum(g[k] * p[k]) for k in base)
    assert abs(inner - fd) <= 1e-3 * abs(fd)


def test_stale_tape_rejected():
    arch = NetArch(depth=1, base_filters=4)
    params = init_params(arch, 0)
    img, tape = unet_forward(params, sample_noise(0, 8, arch))
    params.bump()
    with pytest.raises(UsageError):
        unet_backward(tape, np.ones_like(img), params)
    with pytest.raises(UsageError):
        unet_backward(tape, np.ones((1, 4, 4)))


def test_shape_mismatch_names_layer():
    arch = NetArch(depth=2, base_filters=4)
    params = init_params(arch, 0)
    params.tensors["dec0.conv1.w"] = np.zeros((4, 3, 3, 3))
    with pytest.raises(ArchitectureError, match="dec0.conv1.w"):
        unet_forward(params, sample_noise(0, 8, arch))


def test_paper_full_channel_counts():
    shapes = param_shapes(PAPER_FULL)
    assert [shapes[f"enc{k}.conv2.w"][0] for k in range(5)] == [64, 128, 256, 512, 1024]
    assert shapes["dec3.conv1.w"][:2] == (512, 512 + 1024)
    assert shapes["head.w"] == (1, 64, 1, 1)
    assert [PAPER_FULL.channels(k) for k in range(5)] == [64, 128, 256, 512, 1024]


def test_init_statistics_and_determinism():
    a = init_params(DESK, 9)
    b = init_params(DESK, 9)
    assert all(np.array_equal(a.tensors[k], b.tensors[k]) for k in a.tensors)
    slope = ops.LEAKY_SLOPE
    for name, w in a.tensors.items():
        if name.endswith(".w") and w.size >= 256:
            fan_in = np.prod(w.shape[1:])
            expect = 2.0 / (fan_in * (1 + slope**2))
            assert abs(w.var() / expect - 1) < 0.2, name
        if name.endswith(".b") or name.endswith(".beta"):
            assert np.all(w == 0)
        if name.endswith(".gamma"):
            assert np.all(w == 1)
    img, _ = unet_forward(a, sample_noise(0, 64, DESK))
    assert img.std() > 1e-4


def test_noise_statistics_and_width_check():
    z1 = sample_noise(5, 128, PAPER_FULL)
    z2 = sample_noise(5, 128, PAPER_FULL)
    assert np.array_equal(z1.z, z2.z)
    assert z1.z.shape == (1, 128, 128)
    assert abs(z1.z.mean()) < 0.01
    assert abs(z1.z.var() - 0.1) < 0.005
    with pytest.raises(ValueError):
        sample_noise(5, 100, PAPER_FULL)
    with pytest.raises(ValueError):
        z1.z[0, 0, 0] = 1.0


def test_forward_backward_bit_reproducible():
    params = init_params(DESK, 1)
    z = sample_noise(3, 32, DESK)
    r = np.random.default_rng(0).standard_normal((1, 32, 32))
    i1, t1 = unet_forward(params, z)
    i2, t2 = unet_forward(params, z)
    assert np.array_equal(i1, i2)
    g1, g2 = unet_backward(t1, r), unet_backward(t2, r)
    assert all(np.array_equal(g1[k], g2[k]) for k in g1)
