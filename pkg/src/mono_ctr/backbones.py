"""Scoring networks: DNN, Wide&Deep and DCN with hand-written backward passes.

All three share the same input: one embedding per field (categorical ids and
numerical bucket ids) concatenated with the dense numerical values. The
network produces a single logit per row; ``predict`` applies the sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy.special import expit

from .errors import NonFiniteError, ShapeMismatch, UnsupportedKind
from .features import EncodedBatch, FeatureSpace
from .numcore import ParamStore, init_params

REQUIRED_KINDS = ("dnn", "wide_deep", "dcn")
OPTIONAL_KINDS = ("deepfm", "pnn")


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "dnn"
    embed_dim: int = 32
    hidden: tuple[int, ...] = (512, 255, 127, 127)
    cross_depth: int = 3

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.kind not in REQUIRED_KINDS + OPTIONAL_KINDS:
            raise UnsupportedKind(f"unknown backbone {self.kind!r}")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden sizes must be positive")
        if self.kind == "dcn" and self.cross_depth < 1:
            raise ValueError("dcn needs cross_depth >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "embed_dim": self.embed_dim, "hidden": list(self.hidden), "cross_depth": self.cross_depth}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ModelSpec":
        return cls(d["kind"], int(d["embed_dim"]), tuple(d["hidden"]), int(d.get("cross_depth", 3)))


def _relu(x):
    return np.maximum(x, 0.0)


@dataclass
class Model:
    spec: ModelSpec
    space: FeatureSpace
    store: ParamStore
    frozen: frozenset = field(default_factory=frozenset)

    @property
    def input_width(self) -> int:
        m, n = self.space.n_categorical, self.space.n_numerical
        return (m + n) * self.spec.embed_dim + n

    # ---------------------------------------------------------------- forward

    def _embed(self, batch: EncodedBatch) -> np.ndarray:
        p = self.store.params
        parts = []
        for i, f in enumerate(self.space.schema.categorical):
            parts.append(p[f"emb/{f.name}"][batch.cat[:, i]])
        for j, f in enumerate(self.space.schema.numerical):
            parts.append(p[f"emb/{f.name}"][batch.buckets[:, j]])
        parts.append(batch.dense)
        return np.concatenate(parts, axis=1)

    def _check(self, batch: EncodedBatch) -> None:
        if len(batch) == 0:
            raise ShapeMismatch("empty batch")
        if batch.cat.shape[1] != self.space.n_categorical or batch.buckets.shape[1] != self.space.n_numerical:
            raise ShapeMismatch(
                f"batch has {batch.cat.shape[1]} categorical / {batch.buckets.shape[1]} numerical columns, "
                f"model expects {self.space.n_categorical} / {self.space.n_numerical}"
            )

    def forward(self, batch: EncodedBatch) -> tuple[np.ndarray, dict]:
        """Logits (B,) and the activations the backward pass needs."""
        self._check(batch)
        p = self.store.params
        z = self._embed(batch)
        cache: dict[str, Any] = {"z": z, "batch": batch}

        h = z
        pre, acts = [], [z]
        for k in range(len(self.spec.hidden)):
            a = h @ p[f"mlp/W{k}"] + p[f"mlp/b{k}"]
            h = _relu(a)
            pre.append(a)
            acts.append(h)
        cache["pre"], cache["acts"] = pre, acts

        if self.spec.kind == "dcn":
            xs, ss = [z], []
            x = z
            for l in range(self.spec.cross_depth):
                s = x @ p[f"cross/w{l}"]
                x = z * s[:, None] + p[f"cross/b{l}"] + x
                ss.append(s)
                xs.append(x)
            cache["xs"], cache["ss"] = xs, ss
            head_in = np.concatenate([x, h], axis=1)
        else:
            head_in = h
        cache["head_in"] = head_in
        logits = head_in @ p["out/W"][:, 0] + p["out/b"][0]

        if self.spec.kind == "wide_deep":
            logits = logits + batch.dense @ p["wide/dense"]
            for i, f in enumerate(self.space.schema.categorical):
                logits = logits + p[f"wide/{f.name}"][batch.cat[:, i], 0]
        return logits, cache

    # ---------------------------------------------------------------- backward

    def backward(self, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of ``sum(dlogits * logits)`` with respect to every parameter."""
        p = self.store.params
        g = np.asarray(dlogits, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite upstream gradient")
        batch: EncodedBatch = cache["batch"]
        grads = {name: None for name in p}

        head_in = cache["head_in"]
        grads["out/W"] = (head_in.T @ g)[:, None]
        grads["out/b"] = np.array([g.sum()])
        d_head = g[:, None] * p["out/W"][:, 0][None, :]

        width = self.input_width
        if self.spec.kind == "dcn":
            dx = d_head[:, :width]
            dh = d_head[:, width:]
        else:
            dh = d_head

        acts, pre = cache["acts"], cache["pre"]
        for k in reversed(range(len(self.spec.hidden))):
            da = dh * (pre[k] > 0)
            grads[f"mlp/W{k}"] = acts[k].T @ da
            grads[f"mlp/b{k}"] = da.sum(axis=0)
            dh = da @ p[f"mlp/W{k}"].T
        dz = dh

        if self.spec.kind == "dcn":
            z, xs, ss = cache["z"], cache["xs"], cache["ss"]
            dz_direct = np.zeros_like(z)
            for l in reversed(range(self.spec.cross_depth)):
                grads[f"cross/b{l}"] = dx.sum(axis=0)
                ds = np.einsum("bd,bd->b", dx, z)
                dz_direct += dx * ss[l][:, None]
                grads[f"cross/w{l}"] = xs[l].T @ ds
                dx = dx + ds[:, None] * p[f"cross/w{l}"][None, :]
            dz = dz + dx + dz_direct

        if self.spec.kind == "wide_deep":
            grads["wide/dense"] = batch.dense.T @ g
            for i, f in enumerate(self.space.schema.categorical):
                gw = np.zeros_like(p[f"wide/{f.name}"])
                np.add.at(gw[:, 0], batch.cat[:, i], g)
                grads[f"wide/{f.name}"] = gw

        d = self.spec.embed_dim
        col = 0
        for i, f in enumerate(self.space.schema.categorical):
            ge = np.zeros_like(p[f"emb/{f.name}"])
            np.add.at(ge, batch.cat[:, i], dz[:, col : col + d])
            grads[f"emb/{f.name}"] = ge
            col += d
        for j, f in enumerate(self.space.schema.numerical):
            ge = np.zeros_like(p[f"emb/{f.name}"])
            np.add.at(ge, batch.buckets[:, j], dz[:, col : col + d])
            grads[f"emb/{f.name}"] = ge
            col += d
        for name in self.frozen:
            grads[name] = np.zeros_like(p[name])
        return grads


def param_layout(spec: ModelSpec, space: FeatureSpace) -> list[tuple[str, tuple[int, ...], str]]:
    d = spec.embed_dim
    layout = [(f"emb/{name}", (rows, d), "xavier_uniform") for name, rows in space.table_sizes()]
    width = (space.n_categorical + space.n_numerical) * d + space.n_numerical
    prev = width
    for k, h in enumerate(spec.hidden):
        layout.append((f"mlp/W{k}", (prev, h), "xavier_uniform"))
        layout.append((f"mlp/b{k}", (h,), "zeros"))
        prev = h
    if spec.kind == "dcn":
        for l in range(spec.cross_depth):
            layout.append((f"cross/w{l}", (width,), "xavier_uniform"))
            layout.append((f"cross/b{l}", (width,), "zeros"))
        prev += width
    layout.append(("out/W", (prev, 1), "xavier_uniform"))
    layout.append(("out/b", (1,), "zeros"))
    if spec.kind == "wide_deep":
        layout.append(("wide/dense", (space.n_numerical,), "zeros"))
        for f in space.schema.categorical:
            layout.append((f"wide/{f.name}", (f.vocab_size, 1), "zeros"))
    return layout


def build_model(spec: ModelSpec, space: FeatureSpace, seed: int) -> Model:
    if spec.kind in OPTIONAL_KINDS:
        raise UnsupportedKind(f"backbone {spec.kind!r} is not part of this build (supported: {REQUIRED_KINDS})")
    if space.n_numerical == 0 and space.n_categorical == 0:
        raise ShapeMismatch("feature space has no fields")
    return Model(spec, space, init_params(param_layout(spec, space), seed))


def logits(model: Model, batch: EncodedBatch, chunk: int = 16384) -> np.ndarray:
    out = [model.forward(batch.take(slice(a, a + chunk)))[0] for a in range(0, len(batch), chunk)]
    return np.concatenate(out) if out else np.empty(0)


def predict(model: Model, batch: EncodedBatch, chunk: int = 16384) -> np.ndarray:
    """Click probabilities in (0, 1), one per row."""
    return expit(logits(model, batch, chunk))


def model_gradients(model: Model, batch: EncodedBatch, dlogits_fn) -> tuple[float, dict[str, np.ndarray]]:
    """Run forward/backward where ``dlogits_fn(logits) -> (loss, dloss/dlogits)``."""
    z, cache = model.forward(batch)
    loss, g = dlogits_fn(z)
    return float(loss), model.backward(cache, g)
