"""Scribble-supervised objective: partial CE, local coherence, scale consistency.

All losses take saliency maps as ``(N, 1, H, W)`` tensors (plain ``(H, W)``
arrays are promoted) and return a scalar :class:`Tensor`; per-image values
are averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .config import Label, LscConfig, ObjectiveConfig
from .ops import resize_bilinear
from .tensor import ShapeError, Tensor, add, as_tensor, mul, stack_sum, tmean

CLAMP = 1e-7
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _as_map(pred) -> Tensor:
    t = as_tensor(pred)
    if t.ndim == 2:
        t = Tensor.from_op(t.data[None, None], (t,), lambda g: (g[0, 0],))
    elif t.ndim == 3:
        t = Tensor.from_op(t.data[:, None], (t,), lambda g: (g[:, 0],))
    if t.ndim != 4 or t.shape[1] != 1:
        raise ShapeError(f"saliency map must be (N,1,H,W), got {t.shape}")
    return t


def _as_labels(mask, n: int) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim == 2:
        m = m[None]
    elif m.ndim == 4:
        m = m[:, 0]
    if m.shape[0] != n:
        raise ShapeError(f"mask batch dimension is {m.shape[0]}, predictions have {n}")
    return m


# --------------------------------------------------------------------------
# partial cross-entropy
# --------------------------------------------------------------------------
def partial_ce(pred, mask) -> Tensor:
    """Cross-entropy restricted to scribbled pixels.

    Foreground and background terms are averaged separately and summed; a
    class without labeled pixels contributes zero.
    """
    pred = _as_map(pred)
    n, _, h, w = pred.shape
    labels = _as_labels(mask, n)
    if labels.shape[1:] != (h, w):
        raise ShapeError(f"mask height/width {labels.shape[1:]} differ from prediction {(h, w)}")
    y = np.clip(pred.data[:, 0], CLAMP, 1.0 - CLAMP)
    inside = (pred.data[:, 0] >= CLAMP) & (pred.data[:, 0] <= 1.0 - CLAMP)
    fg = labels == Label.FOREGROUND
    bg = labels == Label.BACKGROUND
    n_fg = fg.sum(axis=(1, 2)).astype(np.float64)
    n_bg = bg.sum(axis=(1, 2)).astype(np.float64)
    inv_fg = np.divide(1.0, n_fg, out=np.zeros(n), where=n_fg > 0)[:, None, None]
    inv_bg = np.divide(1.0, n_bg, out=np.zeros(n), where=n_bg > 0)[:, None, None]
    per_img = (-(np.log(y) * fg) * inv_fg).sum(axis=(1, 2)) + (-(np.log1p(-y) * bg) * inv_bg).sum(axis=(1, 2))
    value = per_img.mean()

    def backward(g):
        dy = (bg * inv_bg / (1.0 - y) - fg * inv_fg / y) * inside
        return ((float(g) / n) * dy[:, None],)

    return Tensor.from_op(np.array(value), (pred,), backward)


# --------------------------------------------------------------------------
# local saliency coherence
# --------------------------------------------------------------------------
def bilateral_weight(pi, pj, ci, cj, cfg: LscConfig = LscConfig()) -> float:
    """Gaussian bilateral affinity between two pixels (position in pixels, RGB in [0, 1])."""
    dp = np.subtract(pi, pj, dtype=np.float64)
    dc = np.subtract(ci, cj, dtype=np.float64)
    e = -(dp @ dp) / (2 * cfg.sigma_p ** 2) - (dc @ dc) / (2 * cfg.sigma_i ** 2)
    return float(np.exp(e) / cfg.weight_norm)


@dataclass
class LscWeights:
    """Bilateral weights for every half-window offset of a batch of images.

    Only offsets with ``dy > 0`` or ``dy == 0, dx > 0`` are stored; the
    mirrored offset produces the same pairs with the same weight.
    """

    height: int
    width: int
    offsets: list = field(default_factory=list)  # (dy, dx, weights[N, H-|dy|, W-|dx|])


def _half_window(k: int) -> list:
    r = k // 2
    return [(dy, dx) for dy in range(0, r + 1) for dx in range(-r, r + 1) if dy > 0 or dx > 0]


def _pair_slices(dy: int, dx: int, h: int, w: int):
    # reference pixel i in src, neighbour j = i + (dy, dx) in dst
    ys = slice(0, h - dy)
    yd = slice(dy, h)
    if dx >= 0:
        xs, xd = slice(0, w - dx), slice(dx, w)
    else:
        xs, xd = slice(-dx, w), slice(0, w + dx)
    return (ys, xs), (yd, xd)


def lsc_weights(image, cfg: LscConfig = LscConfig()) -> LscWeights:
    img = np.asarray(image.data if isinstance(image, Tensor) else image, dtype=np.float64)
    if img.ndim == 3:
        img = img[None]
    if img.ndim != 4 or img.shape[1] != 3:
        raise ShapeError(f"image must be (N,3,H,W), got {img.shape}")
    h, w = img.shape[2:]
    out = LscWeights(h, w)
    for dy, dx in _half_window(cfg.kernel_size):
        if dy >= h or abs(dx) >= w:
            continue
        (ys, xs), (yd, xd) = _pair_slices(dy, dx, h, w)
        dc = img[:, :, ys, xs] - img[:, :, yd, xd]
        e = -(dy * dy + dx * dx) / (2 * cfg.sigma_p ** 2) - (dc * dc).sum(axis=1) / (2 * cfg.sigma_i ** 2)
        out.offsets.append((dy, dx, np.exp(e) / cfg.weight_norm))
    return out


def lsc_loss(pred, image=None, cfg: LscConfig = LscConfig(), weights: Optional[LscWeights] = None) -> Tensor:
    """Bilateral-weighted L1 discrepancy between each pixel and its k x k window.

    Sums over ordered pairs (i, j), j != i in-bounds, and divides by H*W.
    Pass precomputed ``weights`` to share them across several maps of the same
    image batch.
    """
    pred = _as_map(pred)
    n, _, h, w = pred.shape
    if weights is None:
        if image is None:
            raise ValueError("lsc_loss needs an image or precomputed weights")
        weights = lsc_weights(image, cfg)
    if (weights.height, weights.width) != (h, w):
        raise ShapeError(f"image height/width {(weights.height, weights.width)} differ from prediction {(h, w)}")
    s = pred.data[:, 0]
    total = np.zeros(n)
    signs = []
    for dy, dx, f in weights.offsets:
        if f.shape[0] != n:
            raise ShapeError(f"image batch dimension is {f.shape[0]}, predictions have {n}")
        src, dst = _pair_slices(dy, dx, h, w)
        diff = s[(slice(None),) + src] - s[(slice(None),) + dst]
        total += (f * np.abs(diff)).sum(axis=(1, 2))
        signs.append((src, dst, f * np.sign(diff)))
    # each stored offset stands for itself and its mirror
    value = 2.0 * total.mean() / (h * w)

    def backward(g):
        gs = np.zeros_like(s)
        for src, dst, fs in signs:
            gs[(slice(None),) + src] += fs
            gs[(slice(None),) + dst] -= fs
        return ((2.0 * float(g) / (n * h * w)) * gs[:, None],)

    return Tensor.from_op(np.array(value), (pred,), backward)


# --------------------------------------------------------------------------
# SSIM and scale consistency
# --------------------------------------------------------------------------
@lru_cache(maxsize=64)
def _box3_reflect(n: int) -> np.ndarray:
    """(n, n) matrix applying a 1-D 3-tap mean with reflection padding."""
    if n < 2:
        raise ShapeError(f"SSIM needs height and width >= 2, got {n}")
    m = np.zeros((n, n))
    for i in range(n):
        for d in (-1, 0, 1):
            j = i + d
            j = -j if j < 0 else (2 * (n - 1) - j if j > n - 1 else j)
            m[i, j] += 1.0 / 3.0
    m.setflags(write=False)
    return m


def _pool(a: np.ndarray, ph: np.ndarray, pw: np.ndarray) -> np.ndarray:
    return ph @ a @ pw.T


def _pool_t(a: np.ndarray, ph: np.ndarray, pw: np.ndarray) -> np.ndarray:
    return ph.T @ a @ pw


def ssim_map(x, y) -> Tensor:
    """Per-pixel single-scale SSIM with 3x3 mean-filter statistics."""
    x, y = _as_map(x), _as_map(y)
    if x.shape != y.shape:
        raise ShapeError(f"SSIM operands differ in shape: {x.shape} vs {y.shape}")
    h, w = x.shape[2:]
    ph, pw = _box3_reflect(h), _box3_reflect(w)
    xd, yd = x.data, y.data
    mx, my = _pool(xd, ph, pw), _pool(yd, ph, pw)
    exx, eyy, exy = _pool(xd * xd, ph, pw), _pool(yd * yd, ph, pw), _pool(xd * yd, ph, pw)
    a1 = 2 * mx * my + SSIM_C1
    a2 = 2 * (exy - mx * my) + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = (exx - mx * mx) + (eyy - my * my) + SSIM_C2
    s = (a1 * a2) / (b1 * b2)

    def backward(g):
        gs = g * s
        d_exy = gs * 2 / a2
        d_exx = -gs / b2  # same for eyy
        d_mx = gs * (2 * my / a1 - 2 * my / a2 - 2 * mx / b1 + 2 * mx / b2)
        d_my = gs * (2 * mx / a1 - 2 * mx / a2 - 2 * my / b1 + 2 * my / b2)
        t_exy = _pool_t(d_exy, ph, pw)
        t_sq = _pool_t(d_exx, ph, pw)
        gx = _pool_t(d_mx, ph, pw) + 2 * xd * t_sq + yd * t_exy
        gy = _pool_t(d_my, ph, pw) + 2 * yd * t_sq + xd * t_exy
        return gx, gy

    return Tensor.from_op(s, (x, y), backward)


def ssim(x, y) -> np.ndarray:
    """SSIM map as a plain array of shape (N, 1, H, W)."""
    return ssim_map(x, y).data


def abs_diff(x: Tensor, y: Tensor) -> Tensor:
    d = x.data - y.data
    sgn = np.sign(d)
    return Tensor.from_op(np.abs(d), (x, y), lambda g: (g * sgn, -g * sgn))


def ssc_loss(s_small_pred, s_down, alpha: float = 0.85) -> Tensor:
    """Scale-consistency loss between the prediction on a down-scaled input
    and the down-scaled normal prediction: mean of
    ``alpha * (1 - SSIM) / 2 + (1 - alpha) * |a - b|``."""
    a, b = _as_map(s_small_pred), _as_map(s_down)
    if a.shape != b.shape:
        raise ShapeError(f"scale-consistency maps differ in shape: {a.shape} vs {b.shape}")
    s = ssim_map(a, b)
    dissim = mul(add(1.0, -s), alpha / 2.0)
    l1 = mul(abs_diff(a, b), 1.0 - alpha)
    return tmean(add(dissim, l1))


# --------------------------------------------------------------------------
# composition
# --------------------------------------------------------------------------
@dataclass
class LossBreakdown:
    l_ce: float
    l_lsc: float
    l_ssc: float
    l_aux: float
    l_total: float

    def as_dict(self) -> dict:
        return {"l_ce": self.l_ce, "l_lsc": self.l_lsc, "l_ssc": self.l_ssc,
                "l_aux": self.l_aux, "l_total": self.l_total}


def total_objective(outputs, small_output, image, mask, cfg: ObjectiveConfig = ObjectiveConfig(),
                    lsc_cfg: LscConfig = LscConfig(), weights: Optional[LscWeights] = None):
    """Dominant loss on the final map plus lambda-weighted auxiliary stage losses.

    ``outputs`` needs ``final`` and three ``intermediates`` (nearest-output
    stage first), all at input resolution.  ``small_output`` is the prediction
    on the down-scaled input, or ``None`` to drop the consistency term.
    Returns ``(total_tensor, LossBreakdown)``.
    """
    final = _as_map(outputs.final)
    inters = list(outputs.intermediates)
    if len(inters) != 3:
        raise ShapeError(f"expected exactly 3 intermediate maps, got {len(inters)}")
    inters = [_as_map(t) for t in inters]
    for t in inters:
        if t.shape != final.shape:
            raise ShapeError(f"intermediate map {t.shape} is not at the final map's scale {final.shape}")
    if weights is None:
        weights = lsc_weights(image, lsc_cfg)

    ce = partial_ce(final, mask)
    lsc = lsc_loss(final, cfg=lsc_cfg, weights=weights)
    terms = [ce, mul(lsc, cfg.beta)]
    l_ssc = 0.0
    if small_output is not None:
        small = _as_map(small_output)
        sh, sw = small.shape[2:]
        down = resize_bilinear(final, sh, sw)
        ssc = ssc_loss(small, down, cfg.alpha)
        terms.append(ssc)
        l_ssc = ssc.item()

    aux_terms = []
    for lam, t in zip(cfg.lambda_q, inters):
        stage = [partial_ce(t, mask)]
        if cfg.beta != 0.0:
            stage.append(mul(lsc_loss(t, cfg=lsc_cfg, weights=weights), cfg.beta))
        aux_terms.append(mul(stack_sum(stage), lam))
    aux = stack_sum(aux_terms)
    terms.append(aux)
    total = stack_sum(terms)
    breakdown = LossBreakdown(ce.item(), lsc.item(), l_ssc, aux.item(), total.item())
    return total, breakdown
