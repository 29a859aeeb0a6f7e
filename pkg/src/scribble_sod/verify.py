"""Finite-difference suite over every differentiable op, the losses and the full objective."""

from __future__ import annotations

import numpy as np

from .config import Label, LscConfig, NetworkConfig, ObjectiveConfig
from .gradcheck import GradCheckReport, check_gradient
from .losses import lsc_loss, partial_ce, ssc_loss, ssim_map, total_objective
from .network import SaliencyNet, fuse
from .ops import (RunningStats, batch_norm, conv2d, conv_gap, global_avg_pool, relu, resize_array,
                  resize_bilinear, sigmoid, softplus)
from .trainer import small_size
from .tensor import Tensor, add, div, mul, reshape, select, slice_channel, tmean, tsum

OP_TOL = 1e-4
NET_TOL = 1e-3


def _leaf(rng, *shape, low=None, high=None) -> Tensor:
    data = rng.normal(size=shape) if low is None else rng.uniform(low, high, size=shape)
    return Tensor(data, requires_grad=True)


def _proj(out: Tensor, rng) -> Tensor:
    """Random linear functional, so every output entry contributes to the checked scalar."""
    return tsum(mul(out, rng.normal(size=out.shape)))


def random_scribble(rng, n: int, h: int, w: int) -> np.ndarray:
    mask = rng.choice([Label.UNLABELED, Label.FOREGROUND, Label.BACKGROUND], size=(n, h, w), p=[0.6, 0.2, 0.2])
    mask[:, 0, 0] = Label.FOREGROUND
    mask[:, -1, -1] = Label.BACKGROUND
    return mask.astype(np.uint8)


def op_checks(rng) -> list:
    """(name, closure, inputs) triples for the tensor ops."""
    checks = []
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 1, 3, 1)
    checks.append(("add broadcast", lambda: _proj(add(a, b), rng_fixed(1)), [a, b]))
    checks.append(("mul broadcast", lambda: _proj(mul(a, b), rng_fixed(2)), [a, b]))
    d = _leaf(rng, 1, 3, 1, low=0.5, high=2.0)
    checks.append(("div broadcast", lambda: _proj(div(a, d), rng_fixed(3)), [a, d]))
    checks.append(("sum/mean", lambda: add(tsum(mul(a, a)), tmean(a)), [a]))
    checks.append(("reshape/slice/select",
                   lambda: add(_proj(reshape(a, (6, 4)), rng_fixed(4)),
                               add(_proj(slice_channel(reshape(a, (2, 3, 2, 2)), 1), rng_fixed(5)),
                                   _proj(select(a, 1), rng_fixed(6)))), [a]))

    x = _leaf(rng, 2, 3, 7, 7)
    w3, bias = _leaf(rng, 4, 3, 3, 3), _leaf(rng, 4)
    checks.append(("conv2d 3x3 s1 p1", lambda: _proj(conv2d(x, w3, bias, 1, 1), rng_fixed(7)), [x, w3, bias]))
    checks.append(("conv2d 3x3 s2 p1", lambda: _proj(conv2d(x, w3, bias, 2, 1), rng_fixed(8)), [x, w3, bias]))
    w1 = _leaf(rng, 4, 3, 1, 1)
    checks.append(("conv2d 1x1", lambda: _proj(conv2d(x, w1, bias), rng_fixed(9)), [x, w1, bias]))
    w5 = _leaf(rng, 2, 3, 5, 5)
    checks.append(("conv2d 5x5 s1 p0", lambda: _proj(conv2d(x, w5, None, 1, 0), rng_fixed(10)), [x, w5]))
    checks.append(("conv_gap", lambda: _proj(conv_gap(x, w3, bias), rng_fixed(11)), [x, w3, bias]))

    gamma, beta = _leaf(rng, 3, low=0.5, high=1.5), _leaf(rng, 3)
    checks.append(("batch_norm train",
                   lambda: _proj(batch_norm(x, gamma, beta, RunningStats.fresh(3), True), rng_fixed(12)),
                   [x, gamma, beta]))
    run = RunningStats(rng.normal(size=3), rng.uniform(0.5, 2.0, 3))
    checks.append(("batch_norm eval", lambda: _proj(batch_norm(x, gamma, beta, run, False), rng_fixed(13)),
                   [x, gamma, beta]))
    checks.append(("relu", lambda: _proj(relu(x), rng_fixed(14)), [x]))
    checks.append(("sigmoid", lambda: _proj(sigmoid(x), rng_fixed(15)), [x]))
    checks.append(("softplus", lambda: _proj(softplus(x), rng_fixed(16)), [x]))
    checks.append(("resize up", lambda: _proj(resize_bilinear(x, 12, 10), rng_fixed(17)), [x]))
    checks.append(("resize down", lambda: _proj(resize_bilinear(x, 4, 3), rng_fixed(18)), [x]))
    checks.append(("global_avg_pool", lambda: _proj(global_avg_pool(x), rng_fixed(19)), [x]))

    fh, fg, fl = _leaf(rng, 1, 2, 3, 3), _leaf(rng, 1, 2, 3, 3), _leaf(rng, 1, 2, 3, 3)
    ws = [_leaf(rng, 1, 1, 1, 1, low=0.2, high=2.0) for _ in range(3)]
    checks.append(("aggm fuse", lambda: _proj(fuse(fh, fg, fl, *ws), rng_fixed(20)), [fh, fg, fl] + ws))
    return checks


def rng_fixed(k: int) -> np.random.Generator:
    # a fresh generator per call keeps each closure's projection identical between evaluations
    return np.random.default_rng([0xC0FFEE, k])


def loss_checks(rng) -> list:
    checks = []
    n, h, w = 2, 8, 8
    p = _leaf(rng, n, 1, h, w, low=0.05, high=0.95)
    mask = random_scribble(rng, n, h, w)
    image = rng.uniform(size=(n, 3, h, w))
    checks.append(("partial_ce", lambda: partial_ce(p, mask), [p]))
    for k in (3, 5):
        cfg = LscConfig(kernel_size=k)
        checks.append((f"lsc_loss k={k}", lambda cfg=cfg: lsc_loss(p, image, cfg), [p]))
    q = _leaf(rng, n, 1, h, w, low=0.05, high=0.95)
    checks.append(("ssim_map", lambda: _proj(ssim_map(p, q), rng_fixed(30)), [p, q]))
    checks.append(("ssc_loss", lambda: ssc_loss(p, q, 0.85), [p, q]))
    return checks


def network_check(rng, size: int, seed: int, n_points: int = 32) -> GradCheckReport:
    """Full objective (both scales) w.r.t. sampled parameters of a small network."""
    cfg = NetworkConfig(stage_channels=(4, 6, 8, 8), input_size=size, global_channels=8, decoder_channels=6)
    net = SaliencyNet(cfg, seed=seed)
    images = rng.uniform(size=(2, 3, size, size))
    mask = random_scribble(rng, 2, size, size)
    obj = ObjectiveConfig()
    side = small_size(size, obj.rho)
    small = resize_array(images, side, side)

    def closure():
        out = net.forward(Tensor(images), training=True)
        s = net.forward(Tensor(small), training=True).final
        total, _ = total_objective(out, s, images, mask, obj)
        return total

    params = list(net.params.values())
    return check_gradient(closure, params, n_points=n_points, tol=NET_TOL, rng=rng,
                          name=f"network objective {size}x{size}")


def run_suite(seed: int = 0) -> list:
    """Every check in the suite; returns the reports (all must pass)."""
    rng = np.random.default_rng(seed)
    reports = []
    for name, fn, inputs in op_checks(rng) + loss_checks(rng):
        reports.append(check_gradient(fn, inputs, tol=OP_TOL, name=name))
    reports.append(network_check(rng, 16, seed))
    reports.append(network_check(rng, 32, seed))
    return reports
