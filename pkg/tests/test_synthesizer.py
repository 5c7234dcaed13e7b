import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import TRUTH_TABLE, TRUTH_TABLE_W, single_field_violations

from mono_ctr.errors import DegenerateFeature, IneligibleField
from mono_ctr.features import Discretizer, EncodedBatch, FeatureSchema, FieldSpec, fit_features
from mono_ctr.numcore import rng_from_seed
from mono_ctr.synthesizer import (
    eligible_fields,
    move_offsets,
    synthesize_batch,
    synthesize_eval_pairs,
    synthesize_triple,
    write_triples_csv,
)


@pytest.fixture(scope="module")
def table_space():
    schema = FeatureSchema(
        (
            FieldSpec("c", "categorical", vocab_size=4),
            FieldSpec("up", "numerical", n_buckets=TRUTH_TABLE_W, direction="increasing"),
            FieldSpec("down", "numerical", n_buckets=TRUTH_TABLE_W, direction="decreasing"),
            FieldSpec("flat", "numerical", n_buckets=TRUTH_TABLE_W),
        )
    )
    x = np.arange(1000.0)
    space = fit_features(schema, {"c": ["a", "b"] * 500, "up": x, "down": x[::-1], "flat": x})
    assert all(d.n_buckets == TRUTH_TABLE_W for d in space.discretizers.values())
    return space


def one_row(space, k, label):
    """Original sample sitting in bucket ``k`` of every numerical field."""
    dense = np.array([space.transforms[f.name](space.discretizers[f.name].centers[k]) for f in space.schema.numerical])
    return EncodedBatch(np.array([[1]]), np.full((1, 3), k), dense[None, :], np.array([float(label)]))


@pytest.mark.parametrize("case", sorted(TRUTH_TABLE), ids=lambda c: f"{c[0]}-y{c[1]}-k{c[2]}")
def test_truth_table(table_space, case):
    direction, label, k = case
    want_f, want_c = TRUTH_TABLE[case]
    j = 0 if direction == "increasing" else 1
    f = table_space.schema.numerical[j]
    o = one_row(table_space, k, label)
    t = synthesize_triple(o, j, table_space.discretizers[f.name], direction, label, table_space.transforms[f.name])
    got_f = None if t.factual is None else int(t.factual.buckets[0, j])
    got_c = None if t.counterfactual is None else int(t.counterfactual.buckets[0, j])
    assert (got_f, got_c) == (want_f, want_c)
    if t.factual is not None:
        assert t.factual.labels.tolist() == [float(label)]
        assert t.factual.dense[0, j] == table_space.center_dense(f.name)[want_f]
    if t.counterfactual is not None:
        assert t.counterfactual.labels is None
        assert t.counterfactual.dense[0, j] == table_space.center_dense(f.name)[want_c]
    # the vectorised path agrees
    ts = synthesize_batch(o, np.array([j]), table_space)
    assert (None if len(ts.factual) == 0 else int(ts.factual.buckets[0, j])) == want_f
    assert (None if len(ts.counterfactual) == 0 else int(ts.counterfactual.buckets[0, j])) == want_c


def test_label_flip_swaps_moves():
    for sign in (1, -1):
        f_pos, c_pos = move_offsets(sign, True)
        f_neg, c_neg = move_offsets(sign, False)
        assert f_pos == c_neg and c_pos == f_neg
        assert abs(int(f_pos)) == 1 and f_pos == -c_pos


def test_original_is_not_mutated(table_space):
    o = one_row(table_space, 4, 1)
    before = (o.buckets.copy(), o.dense.copy())
    synthesize_triple(o, 0, table_space.discretizers["up"], "increasing", 1, table_space.transforms["up"])
    synthesize_batch(o, np.array([1]), table_space)
    assert np.array_equal(o.buckets, before[0]) and np.array_equal(o.dense, before[1])


def test_errors(table_space):
    o = one_row(table_space, 4, 1)
    with pytest.raises(IneligibleField):
        synthesize_triple(o, 2, table_space.discretizers["flat"], "none", 1, table_space.transforms["flat"])
    with pytest.raises(IneligibleField):
        synthesize_batch(o, np.array([2]), table_space)
    with pytest.raises(IneligibleField):
        synthesize_eval_pairs(o, 2, table_space)
    one_bucket = Discretizer(np.array([]), np.array([0.0]))
    with pytest.raises(DegenerateFeature):
        synthesize_triple(o, 0, one_bucket, "increasing", 1, table_space.transforms["up"])
    assert eligible_fields(table_space) == [0, 1]


def random_batch(space, n, seed):
    rng = rng_from_seed(seed)
    w = TRUTH_TABLE_W
    buckets = rng.integers(0, w, size=(n, 3))
    dense = np.stack(
        [space.center_dense(f.name)[buckets[:, j]] + rng.normal(0, 0.01, n) for j, f in enumerate(space.schema.numerical)],
        axis=1,
    )
    return EncodedBatch(rng.integers(0, 4, (n, 1)), buckets, dense, rng.integers(0, 2, n).astype(float))


def test_single_field_invariant_on_10k_triples(table_space):
    batch = random_batch(table_space, 10_000, 0)
    fields = rng_from_seed(1).integers(0, 2, 10_000)
    ts = synthesize_batch(batch, fields, table_space)
    assert single_field_violations(ts, table_space) == []
    # every original yields at least one pair; interior rows yield two
    interior = (batch.buckets[np.arange(10_000), fields] > 0) & (batch.buckets[np.arange(10_000), fields] < TRUTH_TABLE_W - 1)
    assert ts.n_pairs == 2 * interior.sum() + (~interior).sum()


@given(st.integers(1, 60), st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_batch_agrees_with_scalar_path(table_space, n, seed):
    batch = random_batch(table_space, n, seed)
    fields = rng_from_seed(seed + 1).integers(0, 2, n)
    ts = synthesize_batch(batch, fields, table_space)
    assert single_field_violations(ts, table_space) == []
    for i, t in enumerate(ts.triples(table_space)):
        f = table_space.schema.numerical[t.field]
        ref = synthesize_triple(
            batch.row(i), t.field, table_space.discretizers[f.name], f.direction, int(batch.labels[i]), table_space.transforms[f.name]
        )
        for a, b in ((t.factual, ref.factual), (t.counterfactual, ref.counterfactual)):
            assert (a is None) == (b is None)
            if a is not None:
                assert np.array_equal(a.buckets, b.buckets) and np.array_equal(a.dense, b.dense)


def test_eval_pairs_counts(table_space):
    rng = rng_from_seed(4)
    batch = random_batch(table_space, 100, 3)
    batch.buckets[:, 0] = rng.integers(1, TRUTH_TABLE_W - 1, 100)
    ts = synthesize_eval_pairs(batch, 0, table_space)
    assert len(ts.factual) + len(ts.counterfactual) == 200
    edge = batch.row(0)
    edge.buckets[0, 0] = TRUTH_TABLE_W - 1
    assert synthesize_eval_pairs(edge, 0, table_space).n_pairs == 1
    empty = synthesize_eval_pairs(batch.take(np.arange(0)), 0, table_space)
    assert empty.n_pairs == 0 and len(empty.factual) == 0


def test_triples_csv(tmp_path, table_space):
    batch = random_batch(table_space, 50, 9)
    ts = synthesize_batch(batch, np.zeros(50, dtype=int), table_space)
    n = write_triples_csv(tmp_path / "t.csv", ts, table_space)
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert n == len(rows) == 50
    assert list(rows[0]) == ["field", "k", "k_F", "k_C", "label"]
    for r in rows:
        k, y = int(r["k"]), int(r["label"])
        want = TRUTH_TABLE.get(("increasing", y, k))
        if want is not None:
            assert (r["k_F"] or None) == (None if want[0] is None else str(want[0]))
            assert (r["k_C"] or None) == (None if want[1] is None else str(want[1]))
