"""Desk-scale ablation on the synthetic set: CE only, +SSC, +SSC+LSC."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

from .config import TrainConfig
from .data import read_manifest
from .synth import synth_generate
from .trainer import evaluate_samples, scale_consistency, train

log = logging.getLogger(__name__)

ABLATIONS = {
    "ce": {"enable_ssc": False, "enable_lsc": False},
    "ce+ssc": {"enable_ssc": True, "enable_lsc": False},
    "ce+ssc+lsc": {"enable_ssc": True, "enable_lsc": True},
}


@dataclass
class AblationRow:
    name: str
    f_beta: float
    e_xi: float
    mae: float
    scale_gap: float
    seconds: float


def ablation_config(base: TrainConfig, name: str) -> TrainConfig:
    return dataclasses.replace(base, **ABLATIONS[name])


def make_benchmark(root, n_train: int = 200, n_test: int = 50, size: int = 64, seed: int = 0) -> tuple:
    """Generate (or reuse) train and test splits; the test split uses a different seed."""
    root = Path(root)
    paths = []
    for split, count, s in (("train", n_train, seed), ("test", n_test, seed + 1)):
        manifest = root / split / "manifest.tsv"
        if not manifest.exists():
            synth_generate(root / split, count, size, s)
        paths.append(manifest)
    return tuple(paths)


def run_ablation(root, base: TrainConfig, names=tuple(ABLATIONS)) -> list:
    """Train each configuration from the same seed and score it on the held-out split."""
    root = Path(root)
    train_manifest, test_manifest = make_benchmark(root / "data", size=base.train_size)
    train_set = read_manifest(train_manifest)
    test_samples = list(read_manifest(test_manifest).samples())
    rows = []
    for name in names:
        cfg = ablation_config(base, name)
        t0 = time.perf_counter()
        result = train(train_set, cfg, root / "runs" / name, eval_samples=test_samples)
        seconds = time.perf_counter() - t0
        res = evaluate_samples(result.net, test_samples, cfg.train_size)
        gap = scale_consistency(result.net, test_samples, cfg.train_size, cfg.objective.rho)
        row = AblationRow(name, res.f_beta, res.e_xi, res.mae, gap, seconds)
        log.info("%s", row)
        rows.append(row)
    (root / "ablation.json").write_text(json.dumps([dataclasses.asdict(r) for r in rows], indent=2))
    return rows
