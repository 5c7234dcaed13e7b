"""Multi-seed experiment protocols: baseline vs CCSS, ablation variants and the alpha sweep.

Every seed runs the same pipeline: train a plain BCE baseline, estimate
Shapley importance on it, then train each CCSS variant with that importance
frozen. Mono_rate is reported for eligible fields in importance order, so
the k-th entry is the k-th most important feature of that seed.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .backbones import Model, ModelSpec
from .features import EncodedBatch, FeatureSpace
from .importance import ImportanceProfile, ShapleyConfig, compute_importance
from .metrics import MetricsReport, evaluate
from .trainer import VARIANTS, TrainConfig, train

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (1, 2, 3, 4, 5)


@dataclass
class SeedResult:
    seed: int
    importance: ImportanceProfile
    reports: dict[str, MetricsReport]


@dataclass
class ExperimentResult:
    """Per-seed reports for a set of named runs (``"baseline"`` is the plain model)."""

    seeds: list[SeedResult] = field(default_factory=list)

    @property
    def names(self) -> list[str]:
        return list(self.seeds[0].reports) if self.seeds else []

    def mean_auc(self, name: str) -> float:
        return float(np.mean([s.reports[name].auc for s in self.seeds]))

    def mean_gauc(self, name: str) -> float | None:
        vals = [s.reports[name].gauc for s in self.seeds]
        return None if any(v is None for v in vals) else float(np.mean(vals))

    def mono_by_rank(self, name: str, k: int) -> np.ndarray:
        """Mean over seeds of the Mono_rate of the 1st..k-th most important feature."""
        rows = [list(s.reports[name].mono_rate.values())[:k] for s in self.seeds]
        return np.mean(np.array(rows), axis=0)

    def mean_mono(self, name: str, k: int) -> float:
        return float(np.mean(self.mono_by_rank(name, k)))

    def summary(self, name: str, k: int) -> MetricsReport:
        ranked = self.mono_by_rank(name, k)
        return MetricsReport(
            self.mean_auc(name), self.mean_gauc(name), {f"rank_{i + 1}": float(v) for i, v in enumerate(ranked)}
        )


def run_seed(
    seed: int,
    train_data: EncodedBatch,
    test_data: EncodedBatch,
    space: FeatureSpace,
    spec: ModelSpec,
    base_config: TrainConfig,
    runs: Mapping[str, Mapping],
    shapley: ShapleyConfig | None = None,
    top_k: int | None = None,
    models: dict[str, Model] | None = None,
) -> SeedResult:
    """Train baseline + every entry of ``runs`` (name -> TrainConfig overrides) for one seed."""
    shapley = shapley or ShapleyConfig()
    cfg = base_config.replace(seed=seed)
    baseline, _ = train(cfg.replace(ccss_enabled=False), train_data, space, spec)
    importance = compute_importance(baseline, train_data, _with_seed(shapley, seed))
    fields = importance.ranking()[:top_k] if top_k else importance.ranking()
    reports = {"baseline": evaluate(baseline, test_data, fields)}
    if models is not None:
        models["baseline"] = baseline
    for name, overrides in runs.items():
        model, _ = train(cfg.replace(**dict(overrides)), train_data, space, spec, importance)
        reports[name] = evaluate(model, test_data, fields)
        if models is not None:
            models[name] = model
        log.info("seed %d %s auc=%.4f", seed, name, reports[name].auc)
    return SeedResult(seed, importance, reports)


def _with_seed(cfg: ShapleyConfig, seed: int) -> ShapleyConfig:
    return ShapleyConfig(cfg.n_permutations, cfg.n_probe, seed, cfg.reference, cfg.chunk_rows)


def run_experiment(
    train_data: EncodedBatch,
    test_data: EncodedBatch,
    space: FeatureSpace,
    spec: ModelSpec,
    base_config: TrainConfig,
    runs: Mapping[str, Mapping],
    seeds: Iterable[int] = DEFAULT_SEEDS,
    shapley: ShapleyConfig | None = None,
    top_k: int | None = None,
    workers: int = 1,
) -> ExperimentResult:
    """Run every seed; with ``workers > 1`` seeds train in separate processes.

    Results are collected in seed order, so the outcome does not depend on
    the worker count.
    """
    args = (train_data, test_data, space, spec, base_config, dict(runs), shapley, top_k)
    seeds = list(seeds)
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            done = list(pool.map(run_seed, seeds, *([a] * len(seeds) for a in args)))
    else:
        done = [run_seed(seed, *args) for seed in seeds]
    return ExperimentResult(done)


def ablation_runs(kind: str = "dnn") -> dict[str, dict]:
    label = {"dnn": "DNN", "wide_deep": "Wide & Deep", "dcn": "DCN"}.get(kind, kind.upper())
    return {f"{label}{suffix}": overrides for suffix, overrides in VARIANTS.items()}


def alpha_runs(alphas: Sequence[float]) -> dict[str, dict]:
    return {f"alpha={a:g}": {"alpha": float(a)} for a in alphas}


def sweep_grid(alphas: Sequence[float]) -> list[float]:
    """The requested grid, always including 0 and the default 1.0, sorted."""
    return sorted(set(float(a) for a in alphas) | {0.0, 1.0})


def write_sweep_csv(path: str | Path, result: ExperimentResult, alphas: Sequence[float], k: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "auc", "gauc", "mono_rate"])
        for a in alphas:
            name = f"alpha={a:g}"
            g = result.mean_gauc(name)
            w.writerow([f"{a:g}", f"{result.mean_auc(name):.6f}", "" if g is None else f"{g:.6f}", f"{result.mean_mono(name, k):.6f}"])
