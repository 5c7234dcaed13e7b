"""Composite pointwise + contrastive hinge objective and the mini-batch training loop."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Mapping

import numpy as np
from scipy.special import expit

from .backbones import Model, ModelSpec, build_model
from .errors import ConfigError, NoEligibleFields, NonFiniteLoss
from .features import EncodedBatch, FeatureSpace
from .importance import ImportanceProfile, disturb_distribution, sample_disturb_fields
from .numcore import adam_step, rng_from_seed
from .synthesizer import eligible_fields, synthesize_batch

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


@dataclass
class TrainConfig:
    alpha: float = 1.0
    margin: float = 0.01
    lr: float = 0.05
    lr_decay: float = 0.9
    batch_size: int = 1024
    epochs: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    ccss_enabled: bool = True
    factual_pairwise: bool = True
    counterfactual_pairwise: bool = True
    factual_pointwise: bool = True
    uniform_disturb: bool = False

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if not 0 <= self.margin < 1:
            raise ConfigError("margin must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    @property
    def uses_factual(self) -> bool:
        return self.ccss_enabled and (self.factual_pointwise or (self.factual_pairwise and self.alpha > 0))

    @property
    def uses_counterfactual(self) -> bool:
        return self.ccss_enabled and self.counterfactual_pairwise and self.alpha > 0

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **kw})


# Ablation variants: label suffix -> flag overrides on top of full CCSS.
VARIANTS: dict[str, dict[str, Any]] = {
    "+CCSS": {},
    "(Only Factual Pairwise loss)": dict(factual_pointwise=False, counterfactual_pairwise=False),
    "(Only Counterfactual Pairwise loss)": dict(factual_pointwise=False, factual_pairwise=False),
    "(Equal Probability Random Disturb)": dict(uniform_disturb=True),
    "(Only Factual Pointwise loss)": dict(factual_pairwise=False, counterfactual_pairwise=False),
}


# --------------------------------------------------------------------------- loss terms


def pointwise_loss(p, y):
    """Binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    out = -y * np.log(p) - (1.0 - y) * np.log1p(-p)
    return float(out) if out.ndim == 0 else out


def pairwise_hinge(hi, lo, margin: float):
    """max(0, margin - (hi - lo)): zero once ``hi`` leads ``lo`` by at least the margin."""
    out = np.maximum(0.0, margin - (np.asarray(hi, dtype=np.float64) - np.asarray(lo, dtype=np.float64)))
    return float(out) if out.ndim == 0 else out


def composite_loss(
    preds: Mapping[str, float | None], label: int, config: TrainConfig
) -> tuple[float, dict[str, float]]:
    """Loss of one original sample with its optional factual / counterfactual predictions.

    ``preds`` maps "O", "F", "C" to probabilities (F or C may be None at a
    boundary). Returns the total and its additive breakdown.
    """
    o, f, c = preds["O"], preds.get("F"), preds.get("C")
    on = config.ccss_enabled
    parts = {"pointwise_o": pointwise_loss(o, label), "pointwise_f": 0.0, "pairwise_f": 0.0, "pairwise_c": 0.0}
    if on and f is not None and config.factual_pointwise:
        parts["pointwise_f"] = pointwise_loss(f, label)
    if on and f is not None and config.factual_pairwise:
        hi, lo = (f, o) if label == 1 else (o, f)
        parts["pairwise_f"] = config.alpha * pairwise_hinge(hi, lo, config.margin)
    if on and c is not None and config.counterfactual_pairwise:
        hi, lo = (o, c) if label == 1 else (c, o)
        parts["pairwise_c"] = config.alpha * pairwise_hinge(hi, lo, config.margin)
    return sum(parts.values()), parts


def bce_logit_grad(z: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row BCE and its derivative w.r.t. the logit (zero where the clamp is active)."""
    p = expit(z)
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    return pointwise_loss(p, y), np.where(inside, p - y, 0.0)


def _hinge_grads(p_hi, p_lo, margin):
    """Hinge values and derivatives w.r.t. the hi / lo probabilities."""
    slack = margin - (p_hi - p_lo)
    active = slack > 0
    return np.where(active, slack, 0.0), np.where(active, -1.0, 0.0), np.where(active, 1.0, 0.0)


@dataclass
class BatchLoss:
    total: float
    pointwise: float
    pairwise: float
    parts: dict[str, float]


def batch_objective(
    z_o: np.ndarray,
    y: np.ndarray,
    z_f: np.ndarray,
    f_src: np.ndarray,
    z_c: np.ndarray,
    c_src: np.ndarray,
    config: TrainConfig,
) -> tuple[BatchLoss, np.ndarray, np.ndarray, np.ndarray]:
    """Mean composite loss over the originals and its gradient w.r.t. every logit.

    ``f_src`` / ``c_src`` index the original each synthesized row came from.
    Returns (loss, dL/dz_o, dL/dz_f, dL/dz_c).
    """
    n = len(z_o)
    bce_o, g_o = bce_logit_grad(z_o, y)
    parts = {"pointwise_o": float(bce_o.sum()), "pointwise_f": 0.0, "pairwise_f": 0.0, "pairwise_c": 0.0}
    g_f = np.zeros(len(z_f))
    g_c = np.zeros(len(z_c))
    if config.ccss_enabled:
        p_o = expit(z_o)
        do_prob = np.zeros(n)  # dL/dp_o from hinge terms
        if len(z_f):
            y_f = y[f_src]
            if config.factual_pointwise:
                bce_f, gf = bce_logit_grad(z_f, y_f)
                parts["pointwise_f"] = float(bce_f.sum())
                g_f += gf
            if config.factual_pairwise and config.alpha > 0:
                p_f = expit(z_f)
                pos = y_f == 1
                hi = np.where(pos, p_f, p_o[f_src])
                lo = np.where(pos, p_o[f_src], p_f)
                h, dhi, dlo = _hinge_grads(hi, lo, config.margin)
                parts["pairwise_f"] = config.alpha * float(h.sum())
                dpf = config.alpha * np.where(pos, dhi, dlo)
                dpo = config.alpha * np.where(pos, dlo, dhi)
                g_f += dpf * p_f * (1.0 - p_f)
                np.add.at(do_prob, f_src, dpo)
        if len(z_c) and config.counterfactual_pairwise and config.alpha > 0:
            p_c = expit(z_c)
            pos = y[c_src] == 1
            hi = np.where(pos, p_o[c_src], p_c)
            lo = np.where(pos, p_c, p_o[c_src])
            h, dhi, dlo = _hinge_grads(hi, lo, config.margin)
            parts["pairwise_c"] = config.alpha * float(h.sum())
            dpc = config.alpha * np.where(pos, dlo, dhi)
            dpo = config.alpha * np.where(pos, dhi, dlo)
            g_c += dpc * p_c * (1.0 - p_c)
            np.add.at(do_prob, c_src, dpo)
        g_o = g_o + do_prob * p_o * (1.0 - p_o)
    parts = {k: v / n for k, v in parts.items()}
    loss = BatchLoss(
        total=sum(parts.values()),
        pointwise=parts["pointwise_o"] + parts["pointwise_f"],
        pairwise=parts["pairwise_f"] + parts["pairwise_c"],
        parts=parts,
    )
    return loss, g_o / n, g_f / n, g_c / n


def ccss_loss_and_grads(model: Model, o: EncodedBatch, fields: np.ndarray, config: TrainConfig):
    """Forward the originals with their synthesized rows and backpropagate the composite loss."""
    space = model.space
    parts = [o]
    n_f = n_c = 0
    f_src = c_src = np.empty(0, dtype=np.int64)
    if config.uses_factual or config.uses_counterfactual:
        ts = synthesize_batch(o, fields, space)
        if config.uses_factual:
            parts.append(ts.factual)
            f_src, n_f = ts.factual_src, len(ts.factual_src)
        if config.uses_counterfactual:
            parts.append(ts.counterfactual)
            c_src, n_c = ts.counterfactual_src, len(ts.counterfactual_src)
    rows = o if len(parts) == 1 else EncodedBatch(
        np.concatenate([p.cat for p in parts]),
        np.concatenate([p.buckets for p in parts]),
        np.concatenate([p.dense for p in parts]),
    )
    z, cache = model.forward(rows)
    n = len(o)
    z_o, z_f, z_c = z[:n], z[n : n + n_f], z[n + n_f : n + n_f + n_c]
    loss, g_o, g_f, g_c = batch_objective(z_o, o.labels, z_f, f_src, z_c, c_src, config)
    grads = model.backward(cache, np.concatenate([g_o, g_f, g_c]) if len(parts) > 1 else g_o)
    return loss, grads


# --------------------------------------------------------------------------- training loop


@dataclass
class EpochStats:
    epoch: int
    lr: float
    pointwise: float
    pairwise: float
    total: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    metrics: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"epochs": [asdict(e) for e in self.epochs], "metrics": self.metrics}


def stream_seeds(seed: int) -> tuple[int, int, int]:
    """Independent (init, shuffle, disturb) seeds derived from one run seed."""
    a, b, c = np.random.SeedSequence(int(seed)).generate_state(3)
    return int(a), int(b), int(c)


def train(
    config: TrainConfig,
    data: EncodedBatch,
    space: FeatureSpace,
    spec: ModelSpec | None = None,
    importance: ImportanceProfile | None = None,
    model: Model | None = None,
) -> tuple[Model, TrainReport]:
    """Train a backbone on encoded data, with CCSS synthesis when enabled.

    Disturb fields are drawn afresh for every sample in every epoch from the
    importance distribution (or uniformly with ``uniform_disturb``).
    """
    init_seed, shuffle_seed, disturb_seed = stream_seeds(config.seed)
    if model is None:
        model = build_model(spec or ModelSpec(), space, init_seed)
    shuffle_rng = rng_from_seed(shuffle_seed)
    disturb_rng = rng_from_seed(disturb_seed)

    synth = config.uses_factual or config.uses_counterfactual
    p = None
    if synth:
        ok = set(eligible_fields(space))
        eligible = np.array([j in ok for j in range(space.n_numerical)])
        if not eligible.any():
            raise NoEligibleFields("CCSS needs at least one numerical field with a direction and >= 2 buckets")
        if config.uniform_disturb:
            p = disturb_distribution(np.zeros(space.n_numerical), eligible, uniform=True)
        elif importance is None:
            raise ConfigError("CCSS training needs an importance profile (or uniform_disturb)")
        else:
            p = disturb_distribution(importance.q, eligible & importance.eligible)

    report = TrainReport()
    n = len(data)
    for epoch in range(config.epochs):
        lr = config.lr * config.lr_decay**epoch
        order = shuffle_rng.permutation(n)
        sums = np.zeros(3)
        for a in range(0, n, config.batch_size):
            o = data.take(order[a : a + config.batch_size])
            fields = sample_disturb_fields(p, disturb_rng, len(o)) if synth else None
            loss, grads = ccss_loss_and_grads(model, o, fields, config)
            if not np.isfinite(loss.total):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, batch starting at {a}: {loss.parts}")
            adam_step(model.store, grads, lr, config.beta1, config.beta2, config.eps)
            sums += len(o) * np.array([loss.pointwise, loss.pairwise, loss.total])
        means = sums / max(n, 1)
        stats = EpochStats(epoch, lr, float(means[0]), float(means[1]), float(means[2]))
        report.epochs.append(stats)
        log.info("epoch %d lr=%.4g pointwise=%.5f pairwise=%.5f", epoch, lr, stats.pointwise, stats.pairwise)
    return model, report
