"""Parameter storage, initialisation, the Adam optimizer and a gradient checker.

Tensors are plain float64 numpy arrays; a ``ParamStore`` owns the named
parameters together with their Adam moment estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import DuplicateName, NonFiniteError, ShapeMismatch

INIT_KINDS = ("zeros", "xavier_uniform")


@dataclass
class ParamStore:
    params: dict[str, np.ndarray] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise DuplicateName(f"parameter {name!r} already exists")
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def copy(self) -> "ParamStore":
        return ParamStore(
            params={k: a.copy() for k, a in self.params.items()},
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
            t=self.t,
        )

    def n_params(self) -> int:
        return int(sum(a.size for a in self.params.values()))


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def xavier_bound(shape: tuple[int, ...]) -> float:
    fan_in = shape[0]
    fan_out = shape[1] if len(shape) > 1 else 1
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(layout: Iterable[tuple[str, tuple[int, ...], str]], seed: int) -> ParamStore:
    """Build a ParamStore from ``(name, shape, init_kind)`` triples.

    Draws happen in layout order from a single generator, so the same layout
    and seed always give bit-identical parameters.
    """
    rng = rng_from_seed(seed)
    store = ParamStore()
    for name, shape, kind in layout:
        shape = tuple(int(s) for s in shape)
        if not shape or any(s <= 0 for s in shape):
            raise ShapeMismatch(f"parameter {name!r} needs a non-empty positive shape, got {shape}")
        if kind == "zeros":
            value = np.zeros(shape)
        elif kind == "xavier_uniform":
            bound = xavier_bound(shape)
            value = rng.uniform(-bound, bound, size=shape)
        else:
            raise ValueError(f"unknown init kind {kind!r}; expected one of {INIT_KINDS}")
        store.add(name, value)
    return store


def adam_step(
    store: ParamStore,
    grads: Mapping[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    frozen: Iterable[str] = (),
) -> ParamStore:
    """Apply one bias-corrected Adam update in place and return the store.

    Parameters listed in ``frozen`` keep their values and moments; the step
    counter still advances once.
    """
    if set(grads) != set(store.params):
        missing = set(store.params) - set(grads)
        extra = set(grads) - set(store.params)
        raise ShapeMismatch(f"gradient names do not match parameters (missing={sorted(missing)}, extra={sorted(extra)})")
    for name, g in grads.items():
        if g.shape != store.params[name].shape:
            raise ShapeMismatch(f"gradient for {name!r} has shape {g.shape}, expected {store.params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name!r}")

    frozen = set(frozen)
    store.t += 1
    bc1 = 1.0 - beta1**store.t
    bc2 = 1.0 - beta2**store.t
    for name, g in grads.items():
        if name in frozen:
            continue
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        store.params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return store


def finite_diff_check(
    loss_and_grad: Callable[[ParamStore], tuple[float, Mapping[str, np.ndarray]]],
    store: ParamStore,
    eps: float = 1e-6,
) -> float:
    """Worst per-tensor relative error between analytic and central-difference gradients.

    ``loss_and_grad`` must be a pure function of the store's parameters. The
    relative error for a tensor is ``|a - n| / max(|a|, |n|)`` in the L2 norm,
    zero when both gradients vanish.
    """
    loss, analytic = loss_and_grad(store)
    if not np.isfinite(loss):
        raise NonFiniteError("loss is not finite at the check point")
    worst = 0.0
    for name, p in store.params.items():
        numeric = np.zeros_like(p)
        flat = p.reshape(-1)
        out = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_and_grad(store)[0]
            flat[i] = orig - eps
            down = loss_and_grad(store)[0]
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError(f"loss became non-finite while perturbing {name!r}")
            out[i] = (up - down) / (2.0 * eps)
        a = np.asarray(analytic[name], dtype=np.float64)
        scale = max(np.linalg.norm(a), np.linalg.norm(numeric))
        if scale > 0.0:
            worst = max(worst, float(np.linalg.norm(a - numeric) / scale))
    return worst
