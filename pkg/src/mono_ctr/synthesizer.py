"""Factual / counterfactual sample synthesis by one-bucket moves of a single numerical field.

For an increasing field the factual sample moves the value one bucket in the
direction that agrees with the label (right for positives, left for
negatives) and keeps the label; the counterfactual moves the other way and has
no label. Decreasing fields mirror this. A move that would leave the bucket
range is dropped, so boundary samples yield only one synthesized sample.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import DegenerateFeature, IneligibleField
from .features import DenseTransform, Discretizer, EncodedBatch, EncodedSample, FeatureSpace

_SIGN = {"increasing": 1, "decreasing": -1}


def move_offsets(sign, positive) -> tuple[np.ndarray, np.ndarray]:
    """Bucket offsets (factual, counterfactual) for direction sign and label polarity."""
    lab = np.where(np.asarray(positive, dtype=bool), 1, -1)
    f_off = np.asarray(sign) * lab
    return f_off, -f_off


@dataclass
class SynthTriple:
    original: EncodedSample
    factual: EncodedSample | None
    counterfactual: EncodedSample | None
    field: int
    direction: str
    factual_offset: int
    counterfactual_offset: int

    @property
    def bucket(self) -> int:
        return int(self.original.buckets[0, self.field])


def synthesize_triple(
    original: EncodedSample,
    field: int,
    discretizer: Discretizer,
    direction: str,
    label: int,
    transform: DenseTransform,
) -> SynthTriple:
    if direction not in _SIGN:
        raise IneligibleField(f"field {field} has no monotone direction")
    w = discretizer.n_buckets
    if w < 2:
        raise DegenerateFeature(f"field {field} has {w} bucket(s); nothing to move to")
    k = int(original.buckets[0, field])
    if not 0 <= k < w:
        raise IndexError(f"bucket id {k} outside [0, {w})")
    f_off, c_off = (int(o) for o in move_offsets(_SIGN[direction], label == 1))

    def moved(offset: int, keep_label: bool) -> EncodedSample | None:
        target = k + offset
        if not 0 <= target < w:
            return None
        s = original.copy()
        s.buckets[0, field] = target
        s.dense[0, field] = transform(discretizer.centers[target])
        s.labels = np.array([float(label)]) if keep_label else None
        return s

    return SynthTriple(original, moved(f_off, True), moved(c_off, False), field, direction, f_off, c_off)


@dataclass
class TripleSet:
    """Vectorised triples: rows of ``factual`` / ``counterfactual`` point back into ``original``.

    ``fields`` holds the disturbed numerical-field index per original row.
    """

    original: EncodedBatch
    fields: np.ndarray
    factual: EncodedBatch
    factual_src: np.ndarray
    counterfactual: EncodedBatch
    counterfactual_src: np.ndarray

    @property
    def n_pairs(self) -> int:
        return len(self.factual_src) + len(self.counterfactual_src)

    def triples(self, space: FeatureSpace) -> Iterator[SynthTriple]:
        fpos = {int(s): i for i, s in enumerate(self.factual_src)}
        cpos = {int(s): i for i, s in enumerate(self.counterfactual_src)}
        numerical = space.schema.numerical
        for i in range(len(self.original)):
            j = int(self.fields[i])
            positive = self.original.labels[i] == 1
            f_off, c_off = move_offsets(numerical[j].sign, positive)
            fac = self.factual.row(fpos[i]) if i in fpos else None
            cf = self.counterfactual.row(cpos[i]) if i in cpos else None
            yield SynthTriple(self.original.row(i), fac, cf, j, numerical[j].direction, int(f_off), int(c_off))


def synthesize_batch(batch: EncodedBatch, fields: np.ndarray, space: FeatureSpace) -> TripleSet:
    """Synthesize one triple per row, disturbing ``fields[i]`` for row ``i``."""
    numerical = space.schema.numerical
    fields = np.asarray(fields, dtype=np.int64)
    n = len(batch)
    if n == 0:
        empty = batch.take(slice(0, 0))
        return TripleSet(batch, fields, empty, np.empty(0, np.int64), empty, np.empty(0, np.int64))
    signs = np.array([f.sign for f in numerical])
    widths = np.array([space.discretizers[f.name].n_buckets for f in numerical])
    if np.any(signs[fields] == 0):
        bad = sorted({numerical[j].name for j in fields[signs[fields] == 0]})
        raise IneligibleField(f"fields without a monotone direction cannot be disturbed: {bad}")
    if np.any(widths[fields] < 2):
        raise DegenerateFeature("cannot disturb a field with fewer than 2 buckets")

    rows = np.arange(n)
    k = batch.buckets[rows, fields]
    f_off, c_off = move_offsets(signs[fields], batch.labels == 1)
    center_dense = np.zeros((len(numerical), widths.max()))
    for j, f in enumerate(numerical):
        center_dense[j, : widths[j]] = space.center_dense(f.name)

    def moved(offset, keep_label):
        target = k + offset
        ok = (target >= 0) & (target < widths[fields])
        src = np.flatnonzero(ok)
        out = batch.take(src)
        cols = fields[src]
        out.buckets[np.arange(src.size), cols] = target[src]
        out.dense[np.arange(src.size), cols] = center_dense[cols, target[src]]
        if not keep_label:
            out.labels = None
        return out, src

    fac, fsrc = moved(f_off, True)
    cf, csrc = moved(c_off, False)
    return TripleSet(batch, fields, fac, fsrc, cf, csrc)


def synthesize_eval_pairs(batch: EncodedBatch, field: int, space: FeatureSpace) -> TripleSet:
    """Every sample disturbed on the same field, for monotonicity evaluation."""
    f = space.schema.numerical[field]
    if f.direction == "none":
        raise IneligibleField(f"field {f.name!r} has no monotone direction")
    return synthesize_batch(batch, np.full(len(batch), field, dtype=np.int64), space)


def write_triples_csv(path, triples: TripleSet, space: FeatureSpace) -> int:
    """Dump one line per triple: field, k, k_F, k_C, label (blank when a move is absent)."""
    names = [f.name for f in space.schema.numerical]
    count = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["field", "k", "k_F", "k_C", "label"])
        for t in triples.triples(space):
            kf = "" if t.factual is None else int(t.factual.buckets[0, t.field])
            kc = "" if t.counterfactual is None else int(t.counterfactual.buckets[0, t.field])
            w.writerow([names[t.field], t.bucket, kf, kc, int(t.original.labels[0])])
            count += 1
    return count


def eligible_fields(space: FeatureSpace) -> list[int]:
    return [
        j
        for j, f in enumerate(space.schema.numerical)
        if f.direction != "none" and space.discretizers[f.name].n_buckets >= 2
    ]
