"""Both kernel backends must compute the same numbers.

The compiled extension and the NumPy fallback are interchangeable by
contract; these tests drive each routine in both backends on the same random
inputs and demand near-bitwise agreement, plus slow loop oracles for the
convolution routines so the pair cannot agree on a shared mistake.
"""

from __future__ import annotations

import subprocess
import sys

import numpy as np
import pytest

from flowcast._kernels import (
    BACKEND,
    backends,
    conv1d_forward,
    conv1d_grad_input,
    conv1d_grad_weights,
    points_in_ring,
)

HAVE_BOTH = len(backends()) == 2

needs_both = pytest.mark.skipif(
    not HAVE_BOTH, reason="compiled kernel extension not built"
)


def _conv_case(seed: int, b: int, ci: int, co: int, t: int, k: int, n: int):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(b, ci, t, n))
    w = rng.normal(size=(co, ci, k))
    bias = rng.normal(size=co)
    return x, w, bias


def _loop_forward(x, w, b):
    bsz, ci, t, n = x.shape
    co, _, k = w.shape
    out = np.zeros((bsz, co, t - k + 1, n))
    for bi in range(bsz):
        for o in range(co):
            for ti in range(t - k + 1):
                for ni in range(n):
                    acc = b[o]
                    for c in range(ci):
                        for kk in range(k):
                            acc += x[bi, c, ti + kk, ni] * w[o, c, kk]
                    out[bi, o, ti, ni] = acc
    return out


@needs_both
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_conv_forward_backends_agree(seed):
    x, w, b = _conv_case(seed, b=2, ci=3, co=4, t=11, k=3, n=5)
    impls = backends()
    ref = impls["numpy"].conv1d_forward(x, w, b)
    alt = impls["compiled"].conv1d_forward(x, w, b)
    assert np.allclose(ref, alt, rtol=0, atol=1e-12)


def test_conv_forward_matches_loop_oracle():
    x, w, b = _conv_case(7, b=2, ci=2, co=3, t=8, k=3, n=4)
    for impl in backends().values():
        got = impl.conv1d_forward(x, w, b)
        assert np.allclose(got, _loop_forward(x, w, b), rtol=0, atol=1e-12)


@needs_both
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_conv_grad_input_backends_agree(seed):
    rng = np.random.default_rng(100 + seed)
    w = rng.normal(size=(4, 3, 3))
    g = rng.normal(size=(2, 4, 9, 5))
    impls = backends()
    ref = impls["numpy"].conv1d_grad_input(g, w, 11)
    alt = impls["compiled"].conv1d_grad_input(g, w, 11)
    assert ref.shape == (2, 3, 11, 5)
    assert np.allclose(ref, alt, rtol=0, atol=1e-12)


@needs_both
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_conv_grad_weights_backends_agree(seed):
    rng = np.random.default_rng(200 + seed)
    x = rng.normal(size=(2, 3, 11, 5))
    g = rng.normal(size=(2, 4, 9, 5))
    impls = backends()
    rw, rb = impls["numpy"].conv1d_grad_weights(x, g)
    aw, ab = impls["compiled"].conv1d_grad_weights(x, g)
    assert np.allclose(rw, aw, rtol=0, atol=1e-12)
    assert np.allclose(rb, ab, rtol=0, atol=1e-12)


def test_conv_gradients_match_inner_product_identity():
    # <g, conv(x)> must have gradient (grad_input, grad_weights) -- check by
    # contracting both sides against random directions.
    x, w, b = _conv_case(9, b=2, ci=2, co=3, t=10, k=3, n=4)
    rng = np.random.default_rng(10)
    g = rng.normal(size=(2, 3, 8, 4))
    dx = rng.normal(size=x.shape)
    dw = rng.normal(size=w.shape)
    for impl in backends().values():
        gx = impl.conv1d_grad_input(g, w, x.shape[2])
        gw, gb = impl.conv1d_grad_weights(x, g)
        lhs_x = np.sum(g * (impl.conv1d_forward(x + 1e-7 * dx, w, b) -
                            impl.conv1d_forward(x - 1e-7 * dx, w, b))) / 2e-7
        assert abs(lhs_x - np.sum(gx * dx)) < 1e-5 * max(1.0, abs(lhs_x))
        lhs_w = np.sum(g * (impl.conv1d_forward(x, w + 1e-7 * dw, b) -
                            impl.conv1d_forward(x, w - 1e-7 * dw, b))) / 2e-7
        assert abs(lhs_w - np.sum(gw * dw)) < 1e-5 * max(1.0, abs(lhs_w))
        assert np.allclose(gb, g.sum(axis=(0, 2, 3)), rtol=0, atol=1e-12)


def _random_rings(rng, count):
    rings = []
    for _ in range(count):
        v = rng.integers(3, 9)
        ang = np.sort(rng.uniform(0, 2 * np.pi, size=v))
        rad = rng.uniform(0.5, 2.0, size=v)
        cx, cy = rng.uniform(-1, 1, size=2)
        pts = np.stack([cx + rad * np.cos(ang), cy + rad * np.sin(ang)], axis=1)
        rings.append(np.vstack([pts, pts[:1]]))
    return rings


@needs_both
def test_points_in_ring_backends_agree():
    rng = np.random.default_rng(3)
    impls = backends()
    for ring in _random_rings(rng, 20):
        pts = rng.uniform(-3.5, 3.5, size=(400, 2))
        ref = impls["numpy"].points_in_ring(ring, pts)
        alt = impls["compiled"].points_in_ring(ring, pts)
        assert ref.dtype == np.bool_ and alt.dtype == np.bool_
        assert np.array_equal(ref, alt)


def test_points_in_ring_square_cases():
    ring = np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0], [0.0, 0.0]])
    pts = np.array(
        [
            [1.0, 1.0],  # interior
            [3.0, 1.0],  # outside
            [0.0, 1.0],  # on a vertical edge
            [1.0, 0.0],  # on a horizontal edge
            [0.0, 0.0],  # vertex
            [2.0, 2.0],  # opposite vertex
            [-1e-12, 1.0],  # just outside
        ]
    )
    expect = np.array([True, False, True, True, True, True, False])
    for impl in backends().values():
        assert np.array_equal(impl.points_in_ring(ring, pts), expect)


def test_dispatch_wrappers_run_on_active_backend():
    x, w, b = _conv_case(5, b=1, ci=2, co=2, t=6, k=3, n=3)
    out = conv1d_forward(x, w, b)
    assert out.shape == (1, 2, 4, 3)
    g = np.ones_like(out)
    gx = conv1d_grad_input(g, w, 6)
    assert gx.shape == x.shape
    gw, gb = conv1d_grad_weights(x, g)
    assert gw.shape == w.shape and gb.shape == b.shape
    ring = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    inside = points_in_ring(ring, np.array([[0.2, 0.2], [0.9, 0.9]]))
    assert inside.tolist() == [True, False]
    assert BACKEND in ("compiled", "numpy")


def test_pure_python_env_forces_numpy_backend():
    code = (
        "import flowcast._kernels as k; print(k.BACKEND)"
    )
    proc = subprocess.run(
        [sys.executable, "-c", code],
        capture_output=True,
        text=True,
        env={"PATH": "/usr/bin:/bin", "FLOWCAST_PURE_PYTHON": "1"},
        check=True,
    )
    assert proc.stdout.strip() == "numpy"
