"""AUC, GAUC, RelaImpr and Mono_rate."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .backbones import Model, predict
from .errors import EmptyDataset, IneligibleField, NoComparableUsers, RandomBase, SingleClass
from .features import EncodedBatch
from .synthesizer import eligible_fields, synthesize_eval_pairs


def auc(scores: Sequence[float], labels: Sequence[float]) -> float:
    """Mann-Whitney AUC; a tied positive/negative pair counts one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels) == 1
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both positive and negative labels")
    ranks = rankdata(s)  # average ranks resolve ties to half credit
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def gauc(groups: Iterable[tuple[Sequence[float], Sequence[float]]]) -> float:
    """Impression-weighted mean of per-user AUC, skipping single-class users."""
    num = den = 0.0
    for scores, labels in groups:
        labels = np.asarray(labels)
        if labels.size == 0 or np.all(labels == labels[0]):
            continue
        num += labels.size * auc(scores, labels)
        den += labels.size
    if den == 0:
        raise NoComparableUsers("no user has both positive and negative impressions")
    return num / den


def gauc_by_key(scores: Sequence[float], labels: Sequence[float], keys: Sequence) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    keys = np.asarray(keys)
    order = np.argsort(keys, kind="stable")
    _, starts = np.unique(keys[order], return_index=True)
    chunks = np.split(order, starts[1:])
    return gauc((scores[c], labels[c]) for c in chunks)


def rela_impr(measured: float, base: float) -> float:
    """Relative improvement in percent, measured against the 0.5 random-guess floor."""
    if base == 0.5:
        raise RandomBase("base model scores exactly 0.5; relative improvement undefined")
    return ((measured - 0.5) / (base - 0.5) - 1.0) * 100.0


def monotone_pair_counts(p_o, labels, p_f, f_src, p_c, c_src) -> tuple[int, int]:
    """(valid, comparable) pair counts; ties are never valid."""
    pos_f = labels[f_src] == 1
    ok_f = np.where(pos_f, p_f > p_o[f_src], p_f < p_o[f_src])
    pos_c = labels[c_src] == 1
    ok_c = np.where(pos_c, p_c < p_o[c_src], p_c > p_o[c_src])
    return int(ok_f.sum() + ok_c.sum()), int(len(f_src) + len(c_src))


def _scores(model, batch: EncodedBatch) -> np.ndarray:
    # anything exposing .space and .predict (e.g. a ground-truth scorer) is accepted
    return model.predict(batch) if hasattr(model, "predict") else predict(model, batch)


def mono_rate(model: Model, data: EncodedBatch, field: int, scores: np.ndarray | None = None) -> float:
    """Fraction of neighbour-bucket pairs ordered as the field's direction requires.

    ``scores`` may carry precomputed predictions for ``data``.
    """
    if len(data) == 0:
        raise EmptyDataset("mono_rate needs at least one sample")
    if field not in eligible_fields(model.space):
        raise IneligibleField(f"numerical field {field} is not eligible for monotonicity evaluation")
    ts = synthesize_eval_pairs(data, field, model.space)
    p_o = _scores(model, data) if scores is None else scores
    p_f = _scores(model, ts.factual) if len(ts.factual) else np.empty(0)
    p_c = _scores(model, ts.counterfactual) if len(ts.counterfactual) else np.empty(0)
    valid, comparable = monotone_pair_counts(p_o, data.labels, p_f, ts.factual_src, p_c, ts.counterfactual_src)
    return valid / comparable


@dataclass
class MetricsReport:
    auc: float
    gauc: float | None
    mono_rate: dict[str, float] = field(default_factory=dict)
    rela_impr: dict[str, float] | None = None
    base: str | None = None

    def with_base(self, name: str, base: "MetricsReport") -> "MetricsReport":
        r = {"auc": rela_impr(self.auc, base.auc)}
        if self.gauc is not None and base.gauc is not None:
            r["gauc"] = rela_impr(self.gauc, base.gauc)
        return MetricsReport(self.auc, self.gauc, dict(self.mono_rate), r, name)

    def mean_mono(self, names: Sequence[str] | None = None) -> float:
        names = list(self.mono_rate) if names is None else names
        return float(np.mean([self.mono_rate[n] for n in names]))

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"auc": self.auc, "gauc": self.gauc, "mono_rate": self.mono_rate}
        if self.rela_impr is not None:
            d["rela_impr"] = self.rela_impr
            d["base"] = self.base
        return d


def evaluate(model: Model, data: EncodedBatch, fields: Sequence[int] | None = None) -> MetricsReport:
    """AUC, GAUC (when user keys are present) and Mono_rate for the given numerical fields.

    ``fields`` defaults to every eligible field in schema order.
    """
    scores = _scores(model, data)
    g = None
    if data.groups is not None:
        try:
            g = gauc_by_key(scores, data.labels, data.groups)
        except NoComparableUsers:
            g = None
    names = [f.name for f in model.space.schema.numerical]
    fields = eligible_fields(model.space) if fields is None else list(fields)
    mono = {names[j]: mono_rate(model, data, j, scores) for j in fields}
    return MetricsReport(auc(scores, data.labels), g, mono)


def ordinal(k: int) -> str:
    suffix = "th" if 10 <= k % 100 <= 20 else {1: "st", 2: "nd", 3: "rd"}.get(k % 10, "th")
    return f"{k}{suffix}"


def format_table(rows: Sequence[tuple[str, MetricsReport]], k: int | None = None) -> str:
    """Text table: model, AUC, RelaImpr, GAUC, RelaImpr, then one Mono_rate column per ranked feature."""
    k = k if k is not None else max((len(r.mono_rate) for _, r in rows), default=0)
    head = ["Models", "AUC", "RelaImpr", "GAUC", "RelaImpr"] + [f"{ordinal(i + 1)}_fea" for i in range(k)]
    lines = []
    for name, r in rows:
        ri = r.rela_impr or {}
        cells = [
            name,
            f"{r.auc:.4f}",
            f"{ri['auc']:+.1f}%" if "auc" in ri else "-",
            "-" if r.gauc is None else f"{r.gauc:.4f}",
            f"{ri['gauc']:+.1f}%" if "gauc" in ri else "-",
        ]
        cells += [f"{v * 100:.1f}%" for v in list(r.mono_rate.values())[:k]]
        lines.append(cells)
    widths = [max(len(str(c)) for c in col) for col in zip(head, *lines)] if lines else [len(h) for h in head]
    fmt = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths))
    return "\n".join([fmt(head)] + [fmt(c) for c in lines])
