"""Permutation-sampled Shapley importance of numerical fields and the disturb distribution.

Out-of-coalition fields are set to a reference value (by default the training
mean, on both the bucket and the dense path) and the model is read on the
logit scale. A field's importance is the mean absolute marginal contribution
over probe samples and sampled orderings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .backbones import Model, logits
from .errors import EmptyProbeSet, NoEligibleFields
from .features import EncodedBatch
from .numcore import rng_from_seed
from .synthesizer import eligible_fields


@dataclass
class ShapleyConfig:
    n_permutations: int = 64
    n_probe: int = 256
    seed: int = 0
    # per numerical field (bucket id, dense value); None means the training mean
    reference: tuple[np.ndarray, np.ndarray] | None = None
    chunk_rows: int = 65536

    def __post_init__(self):
        if self.n_permutations < 1:
            raise ValueError("n_permutations must be >= 1")
        if self.n_probe < 1:
            raise ValueError("n_probe must be >= 1")


def permutation_contributions(
    value_fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
    n_samples: int,
    n_players: int,
    n_permutations: int,
    seed: int,
    chunk_rows: int = 65536,
) -> np.ndarray:
    """Signed marginal contributions, shape (n_permutations, n_samples, n_players).

    ``value_fn(masks, sample_idx)`` scores rows where ``masks[r, i]`` says
    whether player ``i`` takes its true value for sample ``sample_idx[r]``.
    Each (permutation, sample) pair gets its own random ordering. Along one
    ordering the contributions telescope to v(all) - v(none).
    """
    if n_samples < 1:
        raise EmptyProbeSet("no probe samples")
    rng = rng_from_seed(seed)
    orders = rng.permuted(np.tile(np.arange(n_players), (n_permutations * n_samples, 1)), axis=1)
    orders = orders.reshape(n_permutations, n_samples, n_players)
    out = np.zeros((n_permutations, n_samples, n_players))

    per_perm = n_samples * (n_players + 1)
    step = max(1, chunk_rows // per_perm)
    tri = np.tril(np.ones((n_players + 1, n_players), dtype=bool), k=-1)  # row t: first t positions on
    for p0 in range(0, n_permutations, step):
        o = orders[p0 : p0 + step]  # (P, S, N)
        P = o.shape[0]
        # position of each player within its ordering
        pos = np.argsort(o, axis=2)
        masks = tri[:, pos]  # (N+1, P, S, N): player on iff its position < t
        masks = np.moveaxis(masks, 0, 2)  # (P, S, N+1, N)
        sample_idx = np.broadcast_to(np.arange(n_samples)[None, :, None], (P, n_samples, n_players + 1))
        vals = value_fn(masks.reshape(-1, n_players), sample_idx.reshape(-1))
        vals = np.asarray(vals, dtype=np.float64).reshape(P, n_samples, n_players + 1)
        deltas = np.diff(vals, axis=2)  # (P, S, N) in ordering positions
        np.put_along_axis(out[p0 : p0 + P], o, deltas, axis=2)
    return out


def model_value_fn(model: Model, probe: EncodedBatch, reference: tuple[np.ndarray, np.ndarray]):
    ref_b, ref_z = (np.asarray(a) for a in reference)

    def value(masks: np.ndarray, idx: np.ndarray) -> np.ndarray:
        batch = EncodedBatch(
            probe.cat[idx],
            np.where(masks, probe.buckets[idx], ref_b[None, :]),
            np.where(masks, probe.dense[idx], ref_z[None, :]),
        )
        return logits(model, batch)

    return value


def estimate_shapley(model: Model, probe: EncodedBatch, config: ShapleyConfig | None = None) -> np.ndarray:
    """Importance q_i >= 0 for each numerical field of the model's feature space."""
    config = config or ShapleyConfig()
    if len(probe) == 0:
        raise EmptyProbeSet("probe set is empty")
    if len(probe) > config.n_probe:
        rng = rng_from_seed(config.seed + 1)
        probe = probe.take(np.sort(rng.choice(len(probe), config.n_probe, replace=False)))
    reference = config.reference if config.reference is not None else model.space.reference()
    contrib = permutation_contributions(
        model_value_fn(model, probe, reference),
        len(probe),
        model.space.n_numerical,
        config.n_permutations,
        config.seed,
        config.chunk_rows,
    )
    return np.abs(contrib).mean(axis=(0, 1))


def disturb_distribution(q: Sequence[float], eligible: Sequence[bool], uniform: bool = False) -> np.ndarray:
    """Normalise importances over eligible fields; all-zero (or ``uniform``) gives equal mass."""
    q = np.asarray(q, dtype=np.float64)
    eligible = np.asarray(eligible, dtype=bool)
    if np.any(q < 0):
        raise ValueError("importance scores must be non-negative")
    if not eligible.any():
        raise NoEligibleFields("no numerical field can be disturbed")
    w = np.where(eligible, q, 0.0)
    total = w.sum()
    if uniform or total == 0.0:
        w = eligible.astype(np.float64)
        total = w.sum()
    return w / total


def sample_disturb_fields(p: np.ndarray, rng: np.random.Generator, size: int) -> np.ndarray:
    """Inverse-CDF draws of field indices from uniforms on [0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    cdf = np.cumsum(p)
    idx = np.searchsorted(cdf, rng.random(size), side="right")
    # float round-off can leave cdf[-1] slightly below a draw
    return np.minimum(idx, np.flatnonzero(p > 0)[-1])


def sample_disturb_field(p: np.ndarray, rng: np.random.Generator) -> int:
    return int(sample_disturb_fields(p, rng, 1)[0])


@dataclass
class ImportanceProfile:
    names: list[str]
    q: np.ndarray
    p: np.ndarray
    eligible: np.ndarray = field(default=None)

    @classmethod
    def from_scores(cls, names: Sequence[str], q: Sequence[float], eligible: Sequence[bool]) -> "ImportanceProfile":
        q = np.asarray(q, dtype=np.float64)
        eligible = np.asarray(eligible, dtype=bool)
        return cls(list(names), q, disturb_distribution(q, eligible), eligible)

    def uniform(self) -> np.ndarray:
        return disturb_distribution(self.q, self.eligible, uniform=True)

    def ranking(self) -> list[int]:
        """Eligible field indices, most important first (ties by position)."""
        idx = [i for i in range(len(self.names)) if self.eligible[i]]
        return sorted(idx, key=lambda i: (-self.q[i], i))

    def top(self, k: int) -> list[int]:
        return self.ranking()[:k]

    def to_dict(self) -> dict:
        return {
            n: {"q": float(self.q[i]), "p": float(self.p[i]), "eligible": bool(self.eligible[i])}
            for i, n in enumerate(self.names)
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImportanceProfile":
        names = list(d)
        return cls(
            names,
            np.array([d[n]["q"] for n in names], dtype=np.float64),
            np.array([d[n]["p"] for n in names], dtype=np.float64),
            np.array([d[n]["eligible"] for n in names], dtype=bool),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "ImportanceProfile":
        return cls.from_dict(json.loads(Path(path).read_text()))


def compute_importance(model: Model, probe: EncodedBatch, config: ShapleyConfig | None = None) -> ImportanceProfile:
    space = model.space
    q = estimate_shapley(model, probe, config)
    ok = set(eligible_fields(space))
    eligible = [j in ok for j in range(space.n_numerical)]
    return ImportanceProfile.from_scores([f.name for f in space.schema.numerical], q, eligible)
