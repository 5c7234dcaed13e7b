"""Feature schema, numerical discretization, dense transforms and record encoding.

Every numerical field is used twice by the models: as a bucket id looked up in
an embedding table, and as a transformed dense value fed straight into the
network. Categorical fields become ids with 0 reserved for unseen values.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateFeature,
    IndexOutOfRange,
    InvalidBucketCount,
    MissingValue,
    MonoCtrError,
    ParseError,
    SchemaError,
    ZeroVariance,
)

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import tomli_w

KINDS = ("categorical", "numerical")
DIRECTIONS = ("increasing", "decreasing", "none")
TRANSFORMS = ("log_zscore", "zscore", "raw")
OOV_ID = 0


class DomainError(MonoCtrError, ValueError):
    pass


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str
    vocab_size: int | None = None
    n_buckets: int = 10
    direction: str = "none"
    transform: str = "log_zscore"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"field {self.name!r}: kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "categorical":
            if self.vocab_size is None or self.vocab_size < 2:
                raise SchemaError(f"categorical field {self.name!r} needs vocab_size >= 2 (id 0 is OOV)")
            if self.direction != "none":
                raise SchemaError(f"categorical field {self.name!r} cannot carry a monotone direction")
        else:
            if self.direction not in DIRECTIONS:
                raise SchemaError(f"field {self.name!r}: direction must be one of {DIRECTIONS}")
            if self.n_buckets < 1:
                raise SchemaError(f"field {self.name!r}: n_buckets must be >= 1")
            if self.direction != "none" and self.n_buckets < 2:
                raise SchemaError(f"monotone field {self.name!r} needs at least 2 buckets")
            if self.transform not in TRANSFORMS:
                raise SchemaError(f"field {self.name!r}: transform must be one of {TRANSFORMS}")

    @property
    def is_numerical(self) -> bool:
        return self.kind == "numerical"

    @property
    def sign(self) -> int:
        """+1 for increasing, -1 for decreasing, 0 when no direction is declared."""
        return {"increasing": 1, "decreasing": -1, "none": 0}[self.direction]

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.kind == "categorical":
            d["vocab_size"] = self.vocab_size
        else:
            d.update(n_buckets=self.n_buckets, direction=self.direction, transform=self.transform)
        return d


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered fields (categorical block first, then numerical) plus label and optional user column."""

    fields: tuple[FieldSpec, ...]
    label: str = "label"
    user_field: str | None = None

    def __post_init__(self):
        ordered = tuple(f for f in self.fields if f.kind == "categorical") + tuple(
            f for f in self.fields if f.kind == "numerical"
        )
        object.__setattr__(self, "fields", ordered)
        names = [f.name for f in ordered]
        dupes = sorted(n for n, c in Counter(names).items() if c > 1)
        if dupes:
            raise SchemaError(f"duplicate field names: {dupes}")
        if self.label in names:
            raise SchemaError(f"label column {self.label!r} is also declared as a feature")

    @property
    def categorical(self) -> tuple[FieldSpec, ...]:
        return tuple(f for f in self.fields if f.kind == "categorical")

    @property
    def numerical(self) -> tuple[FieldSpec, ...]:
        return tuple(f for f in self.fields if f.kind == "numerical")

    def field(self, name: str) -> FieldSpec:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    def numerical_index(self, name: str) -> int:
        for j, f in enumerate(self.numerical):
            if f.name == name:
                return j
        raise KeyError(name)

    def columns(self) -> list[str]:
        cols = [f.name for f in self.fields] + [self.label]
        if self.user_field and self.user_field not in cols:
            cols.append(self.user_field)
        return cols

    def monotone_fields(self) -> list[FieldSpec]:
        return [f for f in self.numerical if f.direction != "none"]

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"label": self.label}
        if self.user_field:
            d["user_field"] = self.user_field
        d["fields"] = [f.to_dict() for f in self.fields]
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FeatureSchema":
        unknown = set(d) - {"label", "user_field", "fields"}
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        fields = []
        for fd in d.get("fields", []):
            bad = set(fd) - {"name", "kind", "vocab_size", "n_buckets", "direction", "transform"}
            if bad:
                raise SchemaError(f"unknown keys for field {fd.get('name')!r}: {sorted(bad)}")
            fields.append(FieldSpec(**fd))
        if not fields:
            raise SchemaError("schema declares no fields")
        return cls(tuple(fields), label=d.get("label", "label"), user_field=d.get("user_field"))


def load_schema(path: str | Path) -> FeatureSchema:
    with open(path, "rb") as fh:
        return FeatureSchema.from_dict(tomllib.load(fh))


def save_schema(schema: FeatureSchema, path: str | Path) -> None:
    with open(path, "wb") as fh:
        tomli_w.dump(schema.to_dict(), fh)


# --------------------------------------------------------------------------- discretization


@dataclass(frozen=True)
class Discretizer:
    cuts: np.ndarray
    centers: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cuts", np.asarray(self.cuts, dtype=np.float64))
        object.__setattr__(self, "centers", np.asarray(self.centers, dtype=np.float64))
        if self.centers.size != self.cuts.size + 1:
            raise ValueError("a discretizer needs exactly one more center than cuts")

    @property
    def n_buckets(self) -> int:
        return int(self.centers.size)

    def to_dict(self) -> dict[str, list[float]]:
        return {"cuts": self.cuts.tolist(), "centers": self.centers.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Sequence[float]]) -> "Discretizer":
        return cls(np.array(d["cuts"], dtype=np.float64), np.array(d["centers"], dtype=np.float64))


def fit_discretizer(values: Sequence[float], n_buckets: int) -> Discretizer:
    """Equal-frequency buckets whose centers are the median of their training values.

    Each target quantile boundary snaps to the nearest gap between distinct
    sorted values, and boundaries that snap to the same gap collapse. Cuts sit
    halfway between the two values around the gap, so every bucket keeps at
    least one training value and its median center bucketizes back to it.
    """
    if n_buckets < 2:
        raise InvalidBucketCount(f"n_buckets must be >= 2, got {n_buckets}")
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if x.size == 0:
        raise DegenerateFeature("cannot fit a discretizer on an empty column")
    if not np.all(np.isfinite(x)):
        raise DegenerateFeature("column contains non-finite values")
    n = x.size
    gaps = np.flatnonzero(x[1:] > x[:-1]) + 1  # split positions between distinct values
    if gaps.size == 0:
        raise DegenerateFeature("all values are equal; fewer than 2 buckets survive")
    chosen: list[int] = []
    for k in range(1, n_buckets):
        target = k * n / n_buckets
        pos = int(np.searchsorted(gaps, target))
        candidates = [gaps[i] for i in (pos - 1, pos) if 0 <= i < gaps.size]
        best = min(candidates, key=lambda g: (abs(g - target), g))
        if not chosen or best > chosen[-1]:
            chosen.append(int(best))
    splits = np.array(chosen)
    cuts = (x[splits - 1] + x[splits]) / 2.0
    bounds = np.concatenate([[0], splits, [n]])
    centers = np.array([np.median(x[a:b]) for a, b in zip(bounds[:-1], bounds[1:])])
    return Discretizer(cuts, centers)


def bucketize(disc: Discretizer, x):
    """Bucket index of ``x``; a value equal to a cut falls into the right bucket."""
    out = np.searchsorted(disc.cuts, x, side="right")
    return int(out) if np.ndim(out) == 0 else out.astype(np.int64)


def bucket_center(disc: Discretizer, i: int) -> float:
    if not 0 <= i < disc.n_buckets:
        raise IndexOutOfRange(f"bucket {i} outside [0, {disc.n_buckets})")
    return float(disc.centers[i])


# --------------------------------------------------------------------------- dense transform


@dataclass(frozen=True)
class DenseTransform:
    kind: str = "log_zscore"
    mu: float = 0.0
    sigma: float = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "raw":
            out = x
        else:
            if self.kind == "log_zscore":
                if np.any(x < 0):
                    raise DomainError("log transform requires non-negative values")
                x = np.log1p(x)
            out = (x - self.mu) / self.sigma
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "mu": self.mu, "sigma": self.sigma}


def fit_dense_transform(values: Sequence[float], kind: str = "log_zscore") -> DenseTransform:
    x = np.asarray(values, dtype=np.float64)
    if kind == "raw":
        return DenseTransform("raw", 0.0, 1.0)
    if kind == "log_zscore":
        if np.any(x < 0):
            raise DomainError("log transform requires non-negative values")
        x = np.log1p(x)
    sigma = float(np.std(x))
    if sigma == 0.0 or not math.isfinite(sigma):
        raise ZeroVariance("column has zero variance; cannot standardize")
    return DenseTransform(kind, float(np.mean(x)), sigma)


def dense_transform(tr: DenseTransform, x):
    return tr(x)


# --------------------------------------------------------------------------- encoding


@dataclass
class EncodedBatch:
    """Model-ready arrays for a batch of samples.

    ``cat`` is (B, M) ids, ``buckets`` is (B, N) bucket ids, ``dense`` is
    (B, N) transformed numerical values. ``labels`` is None for unlabeled
    (counterfactual) rows. ``groups`` carries raw user keys for GAUC.
    """

    cat: np.ndarray
    buckets: np.ndarray
    dense: np.ndarray
    labels: np.ndarray | None = None
    groups: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.buckets.shape[0])

    def take(self, idx) -> "EncodedBatch":
        return EncodedBatch(
            self.cat[idx],
            self.buckets[idx],
            self.dense[idx],
            None if self.labels is None else self.labels[idx],
            None if self.groups is None else self.groups[idx],
        )

    def row(self, i: int) -> "EncodedBatch":
        return self.take(slice(i, i + 1))

    def copy(self) -> "EncodedBatch":
        return self.take(np.arange(len(self)))

    @staticmethod
    def concat(parts: Sequence["EncodedBatch"]) -> "EncodedBatch":
        labels = None
        if all(p.labels is not None for p in parts):
            labels = np.concatenate([p.labels for p in parts])
        groups = None
        if all(p.groups is not None for p in parts):
            groups = np.concatenate([p.groups for p in parts])
        return EncodedBatch(
            np.concatenate([p.cat for p in parts]),
            np.concatenate([p.buckets for p in parts]),
            np.concatenate([p.dense for p in parts]),
            labels,
            groups,
        )


# Single encoded records share the batch representation (B == 1).
EncodedSample = EncodedBatch


def fit_vocab(values: Sequence[Any], vocab_size: int) -> dict[str, int]:
    """Most frequent ``vocab_size - 1`` values get ids 1.. (ties broken by value)."""
    counts = Counter(str(v) for v in values)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return {v: i + 1 for i, (v, _) in enumerate(ranked[: vocab_size - 1])}


@dataclass
class FeatureSpace:
    """A schema together with everything fitted on the training split."""

    schema: FeatureSchema
    vocabs: dict[str, dict[str, int]]
    discretizers: dict[str, Discretizer]
    transforms: dict[str, DenseTransform]
    means: dict[str, float] = field(default_factory=dict)

    @property
    def n_categorical(self) -> int:
        return len(self.schema.categorical)

    @property
    def n_numerical(self) -> int:
        return len(self.schema.numerical)

    def table_sizes(self) -> list[tuple[str, int]]:
        """(field name, rows) for every embedding table, categorical first."""
        sizes = [(f.name, f.vocab_size) for f in self.schema.categorical]
        sizes += [(f.name, self.discretizers[f.name].n_buckets) for f in self.schema.numerical]
        return sizes

    def center_dense(self, name: str) -> np.ndarray:
        """Dense-path values of every bucket center of a numerical field."""
        return np.asarray(self.transforms[name](self.discretizers[name].centers), dtype=np.float64)

    def reference(self) -> tuple[np.ndarray, np.ndarray]:
        """Per numerical field (bucket id, dense value) of the training mean."""
        b, z = [], []
        for f in self.schema.numerical:
            mean = self.means[f.name]
            b.append(bucketize(self.discretizers[f.name], mean))
            z.append(self.transforms[f.name](mean))
        return np.array(b, dtype=np.int64), np.array(z, dtype=np.float64)

    def encode(self, data) -> EncodedBatch:
        """Encode a column mapping (or anything with a ``columns`` mapping)."""
        cols = getattr(data, "columns", data)
        schema = self.schema
        missing = [c for c in (f.name for f in schema.fields) if c not in cols]
        if missing:
            raise MissingValue(f"missing columns: {missing}")
        n = len(cols[schema.fields[0].name])
        cat = np.zeros((n, self.n_categorical), dtype=np.int64)
        for i, f in enumerate(schema.categorical):
            vocab = self.vocabs[f.name]
            cat[:, i] = [vocab.get(str(v), OOV_ID) for v in cols[f.name]]
        buckets = np.zeros((n, self.n_numerical), dtype=np.int64)
        dense = np.zeros((n, self.n_numerical), dtype=np.float64)
        for j, f in enumerate(schema.numerical):
            x = _as_float_column(cols[f.name], f.name)
            buckets[:, j] = bucketize(self.discretizers[f.name], x)
            dense[:, j] = self.transforms[f.name](x)
        labels = None
        if schema.label in cols:
            labels = _as_float_column(cols[schema.label], schema.label)
        groups = None
        if schema.user_field and schema.user_field in cols:
            groups = np.asarray([str(v) for v in cols[schema.user_field]], dtype=object)
        return EncodedBatch(cat, buckets, dense, labels, groups)

    def encode_sample(self, record: Mapping[str, Any]) -> EncodedSample:
        cols: dict[str, list] = {}
        for f in self.schema.fields:
            v = record.get(f.name)
            if v is None or (isinstance(v, str) and v.strip() == ""):
                raise MissingValue(f"record has no value for {f.name!r}")
            if f.is_numerical:
                try:
                    v = float(v)
                except (TypeError, ValueError) as exc:
                    raise ParseError(f"non-numeric value {v!r} in {f.name!r}", column=f.name) from exc
            cols[f.name] = [v]
        for extra in (self.schema.label, self.schema.user_field):
            if extra and record.get(extra) is not None:
                cols[extra] = [record[extra]]
        return self.encode(cols)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": self.schema.to_dict(),
            "vocabs": self.vocabs,
            "discretizers": {k: d.to_dict() for k, d in self.discretizers.items()},
            "transforms": {k: t.to_dict() for k, t in self.transforms.items()},
            "means": self.means,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FeatureSpace":
        return cls(
            schema=FeatureSchema.from_dict(d["schema"]),
            vocabs={k: dict(v) for k, v in d["vocabs"].items()},
            discretizers={k: Discretizer.from_dict(v) for k, v in d["discretizers"].items()},
            transforms={k: DenseTransform(**v) for k, v in d["transforms"].items()},
            means=dict(d.get("means", {})),
        )


def _as_float_column(values, name: str) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    if np.any(np.isnan(x)):
        row = int(np.flatnonzero(np.isnan(x))[0])
        raise MissingValue(f"missing value in {name!r} at row {row}")
    return x


def fit_features(schema: FeatureSchema, data) -> FeatureSpace:
    """Fit vocabularies, discretizers and dense transforms on training data."""
    cols = getattr(data, "columns", data)
    vocabs, discs, transforms, means = {}, {}, {}, {}
    for f in schema.categorical:
        vocabs[f.name] = fit_vocab(cols[f.name], f.vocab_size)
    for f in schema.numerical:
        x = _as_float_column(cols[f.name], f.name)
        if f.n_buckets >= 2:
            discs[f.name] = fit_discretizer(x, f.n_buckets)
        else:
            discs[f.name] = Discretizer(np.empty(0), np.array([float(np.median(x))]))
        transforms[f.name] = fit_dense_transform(x, f.transform)
        means[f.name] = float(np.mean(x))
    return FeatureSpace(schema, vocabs, discs, transforms, means)
