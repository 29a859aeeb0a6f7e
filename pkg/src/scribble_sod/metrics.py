"""Saliency evaluation: mean F-measure, mean E-measure and MAE.

F and E are averaged over 256 binarisations ``pred >= i / 255``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DatasetManifest
from .netpbm import load_map, load_mask

THRESHOLDS = np.arange(256) / 255.0
BETA_SQ = 0.3
ALIGN_EPS = 1e-12


class MetricError(ValueError):
    pass


def _check(pred, gt) -> tuple:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    pred = pred.reshape(pred.shape[-2:]) if pred.ndim > 2 else pred
    gt = gt.reshape(gt.shape[-2:]) if gt.ndim > 2 else gt
    if pred.shape != gt.shape:
        raise MetricError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    return pred, gt.astype(bool)


def mae(pred, gt) -> float:
    pred, gt = _check(pred, gt)
    return float(np.abs(pred - gt).mean())


def _confusion(pred: np.ndarray, gt: np.ndarray) -> tuple:
    """TP, FP, FN, TN counts for each of the 256 thresholds."""
    # number of thresholds each pixel clears: pixel is positive at threshold i iff i < level
    level = np.searchsorted(THRESHOLDS, pred.ravel(), side="right")
    g = gt.ravel()
    pos_fg = np.bincount(level[g], minlength=257)
    pos_bg = np.bincount(level[~g], minlength=257)
    # count of pixels with level > i
    tp = pos_fg[::-1].cumsum()[::-1][1:]
    fp = pos_bg[::-1].cumsum()[::-1][1:]
    n_fg, n_bg = g.sum(), (~g).sum()
    return tp, fp, n_fg - tp, n_bg - fp


def f_measure_curve(pred, gt, beta_sq: float = BETA_SQ) -> np.ndarray:
    pred, gt = _check(pred, gt)
    if not gt.any():
        raise MetricError("F-measure is undefined for an empty ground truth")
    tp, fp, fn, _ = _confusion(pred, gt)
    tp, fp, fn = (v.astype(np.float64) for v in (tp, fp, fn))
    prec = np.divide(tp, tp + fp, out=np.zeros(256), where=(tp + fp) > 0)
    rec = tp / (tp + fn)
    den = beta_sq * prec + rec
    return np.divide((1 + beta_sq) * prec * rec, den, out=np.zeros(256), where=den > 0)


def f_measure(pred, gt, beta_sq: float = BETA_SQ) -> float:
    return float(f_measure_curve(pred, gt, beta_sq).mean())


def _enhanced(phi_b: np.ndarray, phi_g: np.ndarray) -> np.ndarray:
    xi = 2 * phi_b * phi_g / (phi_b * phi_b + phi_g * phi_g + ALIGN_EPS)
    return (xi + 1) ** 2 / 4


def e_measure_curve(pred, gt) -> np.ndarray:
    pred, gt = _check(pred, gt)
    if not gt.any():
        raise MetricError("E-measure is undefined for an empty ground truth")
    tp, fp, fn, tn = (v.astype(np.float64) for v in _confusion(pred, gt))
    n = float(gt.size)
    mb = (tp + fp) / n
    mg = gt.mean()
    # binarised prediction and ground truth each take two centred values
    curve = (tp * _enhanced(1 - mb, 1 - mg) + fp * _enhanced(1 - mb, -mg)
             + fn * _enhanced(-mb, 1 - mg) + tn * _enhanced(-mb, -mg)) / n
    if gt.all():
        curve = np.where(tp == n, 1.0, curve)
    return curve


def e_measure(pred, gt) -> float:
    return float(e_measure_curve(pred, gt).mean())


@dataclass
class EvalResult:
    f_beta: float
    e_xi: float
    mae: float
    per_image: list = field(default_factory=list)  # (id, f_beta, e_xi, mae)

    def to_json(self) -> str:
        """Report text with every float printed to six decimals."""
        def fmt(v):
            return f"{v:.6f}"

        images = ",\n".join(
            f'    {{"id": "{i}", "f_beta": {fmt(f)}, "e_xi": {fmt(e)}, "mae": {fmt(m)}}}'
            for i, f, e, m in self.per_image)
        return ("{\n"
                f'  "dataset": {{"f_beta": {fmt(self.f_beta)}, "e_xi": {fmt(self.e_xi)}, "mae": {fmt(self.mae)}}},\n'
                f'  "images": [\n{images}\n  ]\n' + "}")


def aggregate(per_image: list) -> EvalResult:
    if not per_image:
        raise MetricError("no images to aggregate")
    arr = np.array([row[1:] for row in per_image], dtype=np.float64)
    f, e, m = arr.mean(axis=0)
    return EvalResult(float(f), float(e), float(m), list(per_image))


def evaluate_pair(pred, gt) -> tuple:
    return f_measure(pred, gt), e_measure(pred, gt), mae(pred, gt)


def evaluate_dataset(manifest: DatasetManifest, predictions_dir) -> EvalResult:
    """Score ``<predictions_dir>/<id>.pgm`` against every manifest entry with a mask."""
    pred_dir = Path(predictions_dir)
    entries = [e for e in manifest.entries if e.mask is not None]
    if not entries:
        raise MetricError("manifest has no ground-truth masks")
    missing = [e.id for e in entries if not (pred_dir / f"{e.id}.pgm").is_file()]
    if missing:
        raise MetricError(f"missing predictions for ids: {', '.join(missing)}")
    rows = []
    for e in entries:
        f, ee, m = evaluate_pair(load_map(pred_dir / f"{e.id}.pgm"), load_mask(e.mask))
        rows.append((e.id, f, ee, m))
    return aggregate(rows)
