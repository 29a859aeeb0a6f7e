"""Compact encoder-decoder with a global-context head and AGGM fusion.

Layout for an ``H x W`` input::

    encoder   e1 (H/2)  e2 (H/4)  e3 (H/8)  e4 (H/16)
    context   g = relu(conv1x1(GAP(e4)))
    decoder   h0 = relu(bn(conv1x1(e4)))
              h_t = refine(AGGM(up(h_{t-1}), proj(e_{4-t}), proj(g)))   t = 1, 2, 3
    heads     final <- h3, intermediates <- h2, h1, h0
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config import NetworkConfig
from .ops import (RunningStats, batch_norm, conv2d, conv_gap, global_avg_pool, relu, resize_bilinear, sigmoid,
                  softplus)
from .tensor import Parameter, ShapeError, Tensor, add, as_tensor, div, mul

AGGM_EPS = 1e-8


@dataclass
class NetworkOutputs:
    final: Tensor
    intermediates: list  # nearest-output stage first
    logits: list  # raw stage logits before upsampling: [final, *intermediates]


def fuse(f_h, f_g, f_l, w_h, w_g, w_l, eps: float = AGGM_EPS) -> Tensor:
    """Weighted, normalised sum of the three aligned feature maps.

    Weights are per-sample scalars shaped ``(N, 1, 1, 1)`` (or anything that
    broadcasts) and must be non-negative.
    """
    f_h, f_g, f_l = as_tensor(f_h), as_tensor(f_g), as_tensor(f_l)
    if not f_h.shape == f_g.shape == f_l.shape:
        raise ShapeError(f"AGGM inputs are not aligned: {f_h.shape}, {f_g.shape}, {f_l.shape}")
    w_h, w_g, w_l = as_tensor(w_h), as_tensor(w_g), as_tensor(w_l)
    num = add(add(mul(w_h, f_h), mul(w_g, f_g)), mul(w_l, f_l))
    den = add(add(add(w_h, w_g), w_l), eps)
    return div(num, den)


class SaliencyNet:
    """Parameters, normalisation buffers and the forward graph.

    ``params`` maps names to :class:`Parameter`; ``buffers`` maps batch-norm
    layer names to :class:`RunningStats`.
    """

    def __init__(self, cfg: NetworkConfig = NetworkConfig(), seed: int = 0, enable_aggm: bool = True):
        self.cfg = cfg
        self.enable_aggm = enable_aggm
        self.params: dict = {}
        self.buffers: dict = {}
        self._rng = np.random.default_rng(seed)
        c = cfg.stage_channels
        d = cfg.decoder_channels
        cin = 3
        for s in range(4):
            self._conv(f"enc{s + 1}.conv1", cin, c[s], 3, bias=False)
            self._bn(f"enc{s + 1}.bn1", c[s])
            self._conv(f"enc{s + 1}.conv2", c[s], c[s], 3, bias=False)
            self._bn(f"enc{s + 1}.bn2", c[s])
            cin = c[s]
        self._conv("ctx.conv", c[3], cfg.global_channels, 1)
        self._conv("dec0.conv", c[3], d, 1, bias=False)
        self._bn("dec0.bn", d)
        for t in range(1, 4):
            skip = c[3 - t]
            self._conv(f"dec{t}.proj_l", skip, d, 1)
            self._conv(f"dec{t}.proj_g", cfg.global_channels, d, 1)
            for b in ("h", "g", "l"):
                self._conv(f"dec{t}.gate_{b}", d, 1, 3)
            self._conv(f"dec{t}.refine", d, d, 3, bias=False)
            self._bn(f"dec{t}.bn", d)
        for t in range(4):
            self._conv(f"head{t}", d, 1, 3)
        del self._rng

    # -- construction ---------------------------------------------------------
    def _conv(self, name: str, cin: int, cout: int, k: int, bias: bool = True) -> None:
        std = np.sqrt(2.0 / (cin * k * k))
        self.params[f"{name}.weight"] = Parameter(self._rng.normal(0.0, std, (cout, cin, k, k)), f"{name}.weight")
        if bias:
            self.params[f"{name}.bias"] = Parameter(np.zeros(cout), f"{name}.bias")

    def _bn(self, name: str, c: int) -> None:
        self.params[f"{name}.gamma"] = Parameter(np.ones(c), f"{name}.gamma", decay=False)
        self.params[f"{name}.beta"] = Parameter(np.zeros(c), f"{name}.beta", decay=False)
        self.buffers[name] = RunningStats.fresh(c)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -- layers ---------------------------------------------------------------
    def conv(self, name: str, x: Tensor, stride: int = 1) -> Tensor:
        w = self.params[f"{name}.weight"]
        pad = w.shape[2] // 2
        return conv2d(x, w, self.params.get(f"{name}.bias"), stride=stride, padding=pad)

    def bn(self, name: str, x: Tensor, training: bool) -> Tensor:
        return batch_norm(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"], self.buffers[name], training)

    # -- graph ----------------------------------------------------------------
    def encode(self, image: Tensor, training: bool = True) -> list:
        image = as_tensor(image)
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeError(f"image batch must be (N,3,H,W), got {image.shape}")
        h, w = image.shape[2:]
        if h % 16 or w % 16:
            raise ShapeError(f"input height/width must be divisible by 16, got {h}x{w}")
        feats = []
        x = image
        for s in range(1, 5):
            x = relu(self.bn(f"enc{s}.bn1", self.conv(f"enc{s}.conv1", x), training))
            x = relu(self.bn(f"enc{s}.bn2", self.conv(f"enc{s}.conv2", x, stride=2), training))
            feats.append(x)
        return feats

    def global_context(self, deepest: Tensor) -> Tensor:
        return relu(self.conv("ctx.conv", global_avg_pool(deepest)))

    def aggm_weights(self, stage: int, f_h: Tensor, f_g: Tensor, f_l: Tensor) -> tuple:
        out = []
        for b, f in (("h", f_h), ("g", f_g), ("l", f_l)):
            name = f"dec{stage}.gate_{b}"
            out.append(softplus(conv_gap(f, self.params[f"{name}.weight"], self.params[f"{name}.bias"])))
        return tuple(out)

    def aggm_fuse(self, stage: int, f_h: Tensor, f_l: Tensor, f_g: Tensor, training: bool = True,
                  weights: Optional[Sequence] = None):
        """Fuse aligned high-level, low-level and global features, then refine.

        Returns ``(refined, fused, (w_h, w_g, w_l))``.  ``weights`` forces the
        fusion weights instead of computing them from the gate branches.
        """
        if weights is None:
            if self.enable_aggm:
                weights = self.aggm_weights(stage, f_h, f_g, f_l)
            else:
                weights = (1.0, 1.0, 1.0)
        w_h, w_g, w_l = weights
        fused = fuse(f_h, f_g, f_l, w_h, w_g, w_l)
        refined = relu(self.bn(f"dec{stage}.bn", self.conv(f"dec{stage}.refine", fused), training))
        return refined, fused, (w_h, w_g, w_l)

    def forward(self, image, training: bool = True) -> NetworkOutputs:
        image = as_tensor(image)
        e1, e2, e3, e4 = self.encode(image, training)
        g = self.global_context(e4)
        h = relu(self.bn("dec0.bn", self.conv("dec0.conv", e4), training))
        stages = [h]
        for t, skip in zip((1, 2, 3), (e3, e2, e1)):
            sh, sw = skip.shape[2:]
            f_h = resize_bilinear(h, sh, sw)
            f_l = self.conv(f"dec{t}.proj_l", skip)
            f_g = resize_bilinear(self.conv(f"dec{t}.proj_g", g), sh, sw)
            h, _, _ = self.aggm_fuse(t, f_h, f_l, f_g, training)
            stages.append(h)
        out_h, out_w = image.shape[2:]
        logits = [self.conv(f"head{t}", stages[t]) for t in (3, 2, 1, 0)]
        maps = [sigmoid(resize_bilinear(z, out_h, out_w)) for z in logits]
        return NetworkOutputs(final=maps[0], intermediates=maps[1:], logits=logits)

    __call__ = forward

    # -- state ----------------------------------------------------------------
    def state_arrays(self) -> tuple:
        params = {k: p.data for k, p in self.params.items()}
        stats = {}
        for k, rs in self.buffers.items():
            stats[f"{k}.running_mean"] = rs.mean
            stats[f"{k}.running_var"] = rs.var
        return params, stats

    def load_arrays(self, params: dict, stats: dict) -> None:
        for k, p in self.params.items():
            if k not in params:
                raise ShapeError(f"missing parameter {k!r}")
            if params[k].shape != p.shape:
                raise ShapeError(f"parameter {k!r} has shape {params[k].shape}, expected {p.shape}")
        extra = set(params) - set(self.params)
        if extra:
            raise ShapeError(f"unexpected parameters {sorted(extra)}")
        for k, rs in self.buffers.items():
            for suffix, ref in (("running_mean", rs.mean), ("running_var", rs.var)):
                arr = stats.get(f"{k}.{suffix}")
                if arr is None or arr.shape != ref.shape:
                    raise ShapeError(f"running stat {k}.{suffix} missing or misshapen")
        for k, p in self.params.items():
            p.data[...] = params[k]
        for k, rs in self.buffers.items():
            rs.mean[...] = stats[f"{k}.running_mean"]
            rs.var[...] = stats[f"{k}.running_var"]
