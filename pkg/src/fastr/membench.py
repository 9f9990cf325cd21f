"""Training-phase memory and wall-time scaling measurements.

For each (level count, sample size, term kind) cell a small synthetic
dataset is fitted for a fixed number of epochs with allocation tracking
on; recorded are the peak tracked allocation over the whole epoch loop
and the worst single-epoch peak, both as deltas over the baseline at
loop entry. Gather-based encoding keeps both nearly flat in the level
count and in the sample size.
"""

from __future__ import annotations

import gc
import time
import tracemalloc
from dataclasses import dataclass

import numpy as np

from . import data as data_mod
from .errors import ConfigError
from .fit import FitConfig, ModelSpec, train
from .terms import CategoricalBias, GlobalBias, VaryingCoefficient


@dataclass(frozen=True)
class BenchConfig:
    levels: tuple[int, ...] = (20, 40, 60, 80)
    n_values: tuple[int, ...] = (1000, 2000, 4000)
    kinds: tuple[str, ...] = ("single", "varying")
    epochs: int = 10
    batch_size: int = 250
    seed: int = 0

    def __post_init__(self):
        for k in self.kinds:
            if k not in ("single", "varying"):
                raise ConfigError(f"unknown benchmark term kind {k!r}")


def bench_dataset(n: int, levels: int, seed: int) -> data_mod.Dataset:
    """Balanced one-factor dataset with a smooth time trend."""
    rng = np.random.default_rng(seed)
    codes = np.arange(n, dtype=np.int64) % levels
    rng.shuffle(codes)
    t = rng.uniform(0.0, 1.0, size=n)
    bias = rng.normal(0.0, 1.0, size=levels)
    y = bias[codes] + 0.5 * np.sin(2.0 * np.pi * t) + rng.normal(0.0, 0.3, size=n)
    labels = [f"c{j}" for j in range(levels)]
    return data_mod.from_columns({"t": t, "y": y}, {"c": (codes, labels)},
                                 outcome="y")


def _bench_spec(kind: str) -> ModelSpec:
    if kind == "single":
        terms = (GlobalBias(), CategoricalBias("c"))
    else:
        terms = (GlobalBias(), VaryingCoefficient("c", "t", lambda_t=1.0))
    return ModelSpec(family="gaussian", terms=terms, df=None)


def run_benchmark(cfg: BenchConfig) -> list[dict]:
    """One result row per (kind, levels, n) cell."""
    started_here = not tracemalloc.is_tracing()
    rows = []
    try:
        for kind in cfg.kinds:
            for levels in cfg.levels:
                for n in cfg.n_values:
                    gc.collect()
                    data = bench_dataset(n, levels, cfg.seed)
                    fit_cfg = FitConfig(
                        batch_size=cfg.batch_size, max_epochs=cfg.epochs,
                        validation_fraction=0.0, seed=cfg.seed,
                        track_allocations=True)
                    t0 = time.perf_counter()
                    _, report = train(_bench_spec(kind), data, fit_cfg)
                    rows.append({
                        "kind": kind,
                        "levels": levels,
                        "n": n,
                        "epochs": cfg.epochs,
                        "phase_peak_bytes": report.peak_alloc_bytes,
                        "epoch_peak_bytes": report.epoch_peak_alloc_bytes,
                        "wall_time_s": round(time.perf_counter() - t0, 4),
                    })
    finally:
        if started_here and tracemalloc.is_tracing():
            tracemalloc.stop()
    return rows
