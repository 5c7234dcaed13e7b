"""Datasets, CSV ingestion, the synthetic monotone generator, schema presets and checkpoints."""

from __future__ import annotations

import base64
import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.special import expit

from .backbones import Model, ModelSpec
from .errors import (
    ConfigError,
    CorruptFile,
    EmptyFile,
    ParseError,
    SchemaMismatch,
    VersionMismatch,
)
from .features import EncodedBatch, FeatureSchema, FeatureSpace, FieldSpec
from .numcore import ParamStore, rng_from_seed

CHECKPOINT_FORMAT = "mono-ctr-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Dataset:
    schema: FeatureSchema
    columns: dict[str, np.ndarray]

    def __len__(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    @property
    def labels(self) -> np.ndarray:
        return self.columns[self.schema.label]

    def take(self, idx) -> "Dataset":
        return Dataset(self.schema, {k: v[idx] for k, v in self.columns.items()})

    def split(self, test_fraction: float, seed: int) -> tuple["Dataset", "Dataset"]:
        """Random train/test split; both parts keep the original row order."""
        n = len(self)
        perm = rng_from_seed(seed).permutation(n)
        n_test = int(round(n * test_fraction))
        test = np.sort(perm[:n_test])
        train = np.sort(perm[n_test:])
        return self.take(train), self.take(test)

    def split_by(self, column: str, cutoff: str) -> tuple["Dataset", "Dataset"]:
        """Rows with ``column < cutoff`` (string order, e.g. YYYYMMDD dates) train, the rest test."""
        key = np.asarray(self.columns[column]).astype(str)
        before = key < cutoff
        return self.take(np.flatnonzero(before)), self.take(np.flatnonzero(~before))

    def equals(self, other: "Dataset") -> bool:
        if self.schema != other.schema or set(self.columns) != set(other.columns):
            return False
        return all(np.array_equal(self.columns[k], other.columns[k]) for k in self.columns)


def _parse_label(v: str, row: int, col: str) -> float:
    s = v.strip().lower()
    if s in ("1", "1.0", "true"):
        return 1.0
    if s in ("0", "0.0", "false"):
        return 0.0
    raise ParseError(f"row {row}: label {v!r} in column {col!r} is not 0/1", row=row, column=col)


def load_csv(path: str | Path, schema: FeatureSchema) -> Dataset:
    """Read a header CSV; schema columns are parsed, any other columns are kept as strings.

    Row numbers in errors count data rows from 1. Empty numerical cells load
    as NaN and are reported as missing at encoding time.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path}: file is empty") from None
        rows = list(reader)
    header = [h.strip() for h in header]
    missing = [c for c in schema.columns() if c not in header]
    if missing:
        raise SchemaMismatch(f"{path}: missing column(s) {missing}")
    pos = {h: i for i, h in enumerate(header)}
    numerical = {f.name for f in schema.numerical}
    cols: dict[str, list] = {h: [] for h in header}
    for r, row in enumerate(rows, start=1):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"row {r}: expected {len(header)} cells, found {len(row)}", row=r)
        for h, i in pos.items():
            v = row[i]
            if h in numerical:
                if v.strip() == "":
                    cols[h].append(math.nan)
                    continue
                try:
                    cols[h].append(float(v))
                except ValueError:
                    raise ParseError(f"row {r}: {v!r} in numerical column {h!r}", row=r, column=h) from None
            elif h == schema.label:
                cols[h].append(_parse_label(v, r, h))
            else:
                cols[h].append(v)
    out = {}
    for h, vals in cols.items():
        if h in numerical or h == schema.label:
            out[h] = np.array(vals, dtype=np.float64)
        else:
            out[h] = np.array(vals, dtype=object)
    return Dataset(schema, out)


def write_csv(dataset: Dataset, path: str | Path) -> None:
    names = list(dataset.columns)
    numeric = {f.name for f in dataset.schema.numerical} | {dataset.schema.label}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        cols = [dataset.columns[n] for n in names]
        for i in range(len(dataset)):
            w.writerow([_fmt(c[i], n == dataset.schema.label) if n in numeric else c[i] for c, n in zip(cols, names)])


def _fmt(v, is_label: bool) -> str:
    if is_label:
        return str(int(v))
    return repr(float(v))


# --------------------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Desk-scale stand-in for a CTR log with known monotone ground truth.

    Numerical fields are log-normal, each contributing a strictly monotone
    piecewise-linear function of ``log1p(x)`` to the logit; categorical
    fields add Gaussian per-value effects. ``noise`` is the std of the logit
    noise.
    """

    n_samples: int = 50_000
    cat_vocab: tuple[int, ...] = (400, 800, 20, 8)
    cat_scale: float = 0.6
    directions: tuple[str, ...] = (
        "increasing",
        "increasing",
        "decreasing",
        "increasing",
        "increasing",
        "decreasing",
        "increasing",
        "increasing",
    )
    strengths: tuple[float, ...] = (1.6, 1.3, 1.0, 0.8, 0.6, 0.45, 0.3, 0.2)
    n_segments: int = 6
    noise: float = 0.5
    bias: float = -0.8
    n_buckets: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if len(self.directions) != len(self.strengths):
            raise ConfigError("directions and strengths must have the same length")
        if any(d not in ("increasing", "decreasing") for d in self.directions):
            raise ConfigError("synthetic numerical fields need a strict direction")
        if any(s <= 0 for s in self.strengths):
            raise ConfigError("strengths must be positive")

    @property
    def cat_names(self) -> list[str]:
        return [("user_id", "item_id")[i] if i < 2 else f"cat_{i}" for i in range(len(self.cat_vocab))]

    @property
    def num_names(self) -> list[str]:
        return [f"num_{j}" for j in range(len(self.directions))]

    def schema(self) -> FeatureSchema:
        fields = [FieldSpec(n, "categorical", vocab_size=v + 1) for n, v in zip(self.cat_names, self.cat_vocab)]
        fields += [
            FieldSpec(n, "numerical", n_buckets=self.n_buckets, direction=d)
            for n, d in zip(self.num_names, self.directions)
        ]
        return FeatureSchema(tuple(fields), label="label", user_field="user_id" if self.cat_vocab else None)

    def to_dict(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SyntheticSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synthetic keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


LOGNORMAL_MU = 1.0
LOGNORMAL_SIGMA = 1.0


@dataclass
class GroundTruth:
    """The noise-free logit of a synthetic dataset."""

    spec: SyntheticSpec
    knots: list[np.ndarray]  # per numerical field, in log1p(x) space
    values: list[np.ndarray]
    cat_effects: list[dict[str, float]]

    def shape(self, j: int, x) -> np.ndarray:
        """Contribution of numerical field ``j``: piecewise linear, extended linearly past the end knots."""
        u = np.log1p(np.asarray(x, dtype=np.float64))
        k, v = self.knots[j], self.values[j]
        out = np.interp(u, k, v)
        lo_slope = (v[1] - v[0]) / (k[1] - k[0])
        hi_slope = (v[-1] - v[-2]) / (k[-1] - k[-2])
        out = np.where(u < k[0], v[0] + lo_slope * (u - k[0]), out)
        return np.where(u > k[-1], v[-1] + hi_slope * (u - k[-1]), out)

    def logit(self, columns: Mapping[str, Sequence]) -> np.ndarray:
        spec = self.spec
        n = len(columns[spec.num_names[0]])
        z = np.full(n, spec.bias)
        for name, eff in zip(spec.cat_names, self.cat_effects):
            z += np.array([eff.get(str(c), 0.0) for c in columns[name]])
        for j, name in enumerate(spec.num_names):
            z += self.shape(j, columns[name])
        return z


def _make_shape(rng: np.random.Generator, strength: float, sign: int, n_segments: int):
    zs = np.linspace(-2.0, 2.0, n_segments + 1)
    knots = np.log1p(np.exp(LOGNORMAL_MU + LOGNORMAL_SIGMA * zs))
    # uneven slopes: a few steep segments, the rest nearly flat (but never flat)
    raw = rng.exponential(1.0, n_segments) ** 2 + 0.03
    rises = strength * raw / raw.sum()
    values = np.concatenate([[0.0], np.cumsum(rises)])
    values -= values[n_segments // 2]
    return knots, sign * values


def generate_synthetic(spec: SyntheticSpec, seed: int | None = None) -> tuple[Dataset, GroundTruth]:
    """Draw a labelled dataset; same settings and seed give identical output."""
    rng = rng_from_seed(spec.seed if seed is None else seed)
    n = spec.n_samples
    cols: dict[str, np.ndarray] = {}
    effects = []
    for name, vocab in zip(spec.cat_names, spec.cat_vocab):
        prefix = name[0]
        eff = rng.normal(0.0, spec.cat_scale, vocab)
        effects.append({f"{prefix}{i}": float(e) for i, e in enumerate(eff)})
        cols[name] = np.array([f"{prefix}{i}" for i in rng.integers(0, vocab, n)], dtype=object)
    knots, values = [], []
    for j, name in enumerate(spec.num_names):
        sign = 1 if spec.directions[j] == "increasing" else -1
        k, v = _make_shape(rng, spec.strengths[j], sign, spec.n_segments)
        knots.append(k)
        values.append(v)
        cols[name] = np.exp(rng.normal(LOGNORMAL_MU, LOGNORMAL_SIGMA, n))
    truth = GroundTruth(spec, knots, values, effects)
    z = truth.logit(cols) + rng.normal(0.0, spec.noise, n)
    cols["label"] = (rng.random(n) < expit(z)).astype(np.float64)
    return Dataset(spec.schema(), cols), truth


class TruthScorer:
    """Scores encoded rows with the ground-truth logit, so metrics can treat it like a model."""

    def __init__(self, truth: GroundTruth, space: FeatureSpace):
        self.truth = truth
        self.space = space
        self._inv_vocab = {
            f.name: {i: v for v, i in space.vocabs[f.name].items()} for f in space.schema.categorical
        }

    def _raw(self, batch: EncodedBatch) -> dict[str, np.ndarray]:
        cols: dict[str, np.ndarray] = {}
        for i, f in enumerate(self.space.schema.categorical):
            inv = self._inv_vocab[f.name]
            cols[f.name] = np.array([inv.get(int(c), "") for c in batch.cat[:, i]], dtype=object)
        for j, f in enumerate(self.space.schema.numerical):
            t = self.space.transforms[f.name]
            d = batch.dense[:, j]
            if t.kind == "raw":
                cols[f.name] = d
            elif t.kind == "zscore":
                cols[f.name] = d * t.sigma + t.mu
            else:
                cols[f.name] = np.expm1(d * t.sigma + t.mu)
        return cols

    def logits(self, batch: EncodedBatch) -> np.ndarray:
        return self.truth.logit(self._raw(batch))

    def predict(self, batch: EncodedBatch) -> np.ndarray:
        return expit(self.logits(batch))


# --------------------------------------------------------------------------- presets

_KUAIRAND_USER_NUMERIC = ("follow_user_num", "fans_user_num", "friend_user_num", "register_days")
_KUAIRAND_VIDEO_NUMERIC = (
    "show_cnt",
    "play_cnt",
    "complete_play_cnt",
    "valid_play_cnt",
    "long_time_play_cnt",
    "like_cnt",
    "click_like_cnt",
    "comment_cnt",
    "follow_cnt",
    "share_cnt",
    "download_cnt",
    "collect_cnt",
)


def kuairand_pure_schema(n_buckets: int = 10) -> FeatureSchema:
    """Pre-joined KuaiRand-Pure log (user/video statistics merged in), label ``is_click``.

    Train/test split is by the ``date`` column: :data:`KUAIRAND_SPLIT_DATE`.
    """
    fields = [
        FieldSpec("user_id", "categorical", vocab_size=30_000),
        FieldSpec("video_id", "categorical", vocab_size=10_000),
        FieldSpec("tab", "categorical", vocab_size=16),
        FieldSpec("user_active_degree", "categorical", vocab_size=8),
    ]
    for name in _KUAIRAND_USER_NUMERIC + _KUAIRAND_VIDEO_NUMERIC:
        fields.append(FieldSpec(name, "numerical", n_buckets=n_buckets, direction="increasing"))
    return FeatureSchema(tuple(fields), label="is_click", user_field="user_id")


KUAIRAND_DATE_COLUMN = "date"
KUAIRAND_SPLIT_DATE = "20220501"


def industrial_schema(n_buckets: int = 10) -> FeatureSchema:
    """Layout of the 14-statistic video collection log (no data shipped), label ``is_collect``."""
    fields = [
        FieldSpec("user_id", "categorical", vocab_size=1_000_000),
        FieldSpec("video_id", "categorical", vocab_size=1_000_000),
    ]
    for side in ("video", "user"):
        for stat in ("ctr", "ltr", "wtr", "ftr", "vtr", "lvtr", "cmtr"):
            fields.append(
                FieldSpec(f"{side}_{stat}", "numerical", n_buckets=n_buckets, direction="increasing", transform="zscore")
            )
    return FeatureSchema(tuple(fields), label="is_collect", user_field="user_id")


PRESETS = {"kuairand_pure": kuairand_pure_schema, "industrial": industrial_schema}


# --------------------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    model: Model
    train_config: dict[str, Any] = field(default_factory=dict)
    seed: int | None = None
    version: int = CHECKPOINT_VERSION


def _encode_tensor(a: np.ndarray) -> dict[str, Any]:
    data = np.ascontiguousarray(a, dtype="<f8").tobytes()
    return {"shape": list(a.shape), "data": base64.b64encode(data).decode("ascii")}


def _decode_tensor(d: Mapping[str, Any]) -> np.ndarray:
    raw = base64.b64decode(d["data"], validate=True)
    shape = tuple(int(s) for s in d["shape"])
    a = np.frombuffer(raw, dtype="<f8")
    if a.size != int(np.prod(shape)):
        raise CorruptFile("tensor payload does not match its shape")
    return a.reshape(shape).astype(np.float64)


def save_checkpoint(
    path: str | Path,
    model: Model,
    train_config: Mapping[str, Any] | None = None,
    seed: int | None = None,
) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "features": model.space.to_dict(),
        "model_spec": model.spec.to_dict(),
        "params": {k: _encode_tensor(v) for k, v in model.store.params.items()},
        "step": model.store.t,
        "train_config": dict(train_config or {}),
        "seed": seed,
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> Checkpoint:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{path}: not a valid checkpoint ({exc.msg})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CorruptFile(f"{path}: not a mono-ctr checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {doc.get('version')!r}, expected {CHECKPOINT_VERSION}")
    try:
        space = FeatureSpace.from_dict(doc["features"])
        spec = ModelSpec.from_dict(doc["model_spec"])
        store = ParamStore()
        for name, t in doc["params"].items():
            store.add(name, _decode_tensor(t))
        store.t = int(doc.get("step", 0))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CorruptFile):
            raise
        raise CorruptFile(f"{path}: malformed checkpoint ({exc})") from None
    return Checkpoint(Model(spec, space, store), doc.get("train_config", {}), doc.get("seed"), doc["version"])
