from __future__ import annotations

import numpy as np
import pytest

from mono_ctr.backbones import ModelSpec, build_model
from mono_ctr.dataio import SyntheticSpec, generate_synthetic
from mono_ctr.features import fit_features
from mono_ctr.trainer import ccss_loss_and_grads

ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


SMALL_SPEC = SyntheticSpec(
    n_samples=600,
    cat_vocab=(30, 12),
    directions=("increasing", "decreasing", "increasing"),
    strengths=(1.5, 1.0, 0.5),
    n_buckets=6,
    seed=11,
)


@pytest.fixture(scope="session")
def small():
    """A tiny synthetic dataset with its fitted feature space and encoding."""
    data, truth = generate_synthetic(SMALL_SPEC)
    space = fit_features(data.schema, data)
    return data, truth, space, space.encode(data)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_model(space, kind="dnn", seed=0, embed_dim=3, hidden=(5, 4), cross_depth=2):
    return build_model(ModelSpec(kind, embed_dim, hidden, cross_depth), space, seed)


def composite_loss_fn(model, batch, fields, config):
    """Pure (loss, grads) of the full composite objective as a function of a parameter store."""

    def fn(store):
        model.store = store
        loss, grads = ccss_loss_and_grads(model, batch, fields, config)
        return loss.total, grads

    return fn
