import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import exact_shapley

from mono_ctr.backbones import ModelSpec, build_model, logits
from mono_ctr.dataio import SyntheticSpec, generate_synthetic
from mono_ctr.errors import EmptyProbeSet, NoEligibleFields
from mono_ctr.features import EncodedBatch, fit_features
from mono_ctr.importance import (
    ImportanceProfile,
    ShapleyConfig,
    compute_importance,
    disturb_distribution,
    estimate_shapley,
    permutation_contributions,
    sample_disturb_field,
    sample_disturb_fields,
)
from mono_ctr.numcore import rng_from_seed


def additive_model(n_features: int, null_field: int | None = None, seed: int = 0):
    """A model with no hidden layer: the logit is a sum of per-field terms."""
    spec = SyntheticSpec(
        n_samples=300,
        cat_vocab=(5,),
        directions=("increasing",) * n_features,
        strengths=(1.0,) * n_features,
        n_buckets=5,
        seed=seed,
    )
    data, _ = generate_synthetic(spec)
    space = fit_features(data.schema, data)
    model = build_model(ModelSpec("dnn", 2, ()), space, seed)
    if null_field is not None:
        d = model.spec.embed_dim
        m = space.n_categorical
        w = model.store.params["out/W"]
        w[(m + null_field) * d : (m + null_field + 1) * d] = 0.0
        w[(m + space.n_numerical) * d + null_field] = 0.0
    return model, space.encode(data)


def enumeration_oracle(model, probe):
    """Exact mean |marginal| per field, building each coalition batch by hand."""
    space = model.space
    ref_b, ref_z = space.reference()
    n = space.n_numerical
    total = np.zeros(n)
    for r in range(len(probe)):

        def value(coalition, r=r):
            b = np.where([j in coalition for j in range(n)], probe.buckets[r], ref_b)
            z = np.where([j in coalition for j in range(n)], probe.dense[r], ref_z)
            row = EncodedBatch(probe.cat[r : r + 1], b[None, :], z[None, :])
            return float(model.forward(row)[0][0])

        total += exact_shapley(value, n, absolute=True)
    return total / len(probe)


@pytest.mark.parametrize("n_features", [2, 5, 8])
def test_additive_model_matches_enumeration(n_features):
    model, enc = additive_model(n_features, null_field=n_features - 1)
    probe = enc.take(np.arange(12))
    q = estimate_shapley(model, probe, ShapleyConfig(n_permutations=2000, n_probe=12, seed=3))
    exact = enumeration_oracle(model, probe)
    live = exact > 0
    assert np.all(np.abs(q[live] - exact[live]) <= 0.05 * exact[live])
    assert q[-1] < 0.01 * q.max()
    assert q[-1] == 0.0


def interacting_value(x):
    """Non-additive game with a duplicated pair (players 0 and 1) and a null player 3."""

    def v(masks, idx):
        xs = np.where(masks, x[idx], 0.0)
        return (xs[:, 0] + xs[:, 1]) ** 2 + xs[:, 2] * xs[:, 0] + 0.5 * xs[:, 2] + 0.0 * xs[:, 3]

    return v


def test_sampled_values_converge_on_interacting_game():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(6, 4))
    x[:, 1] = x[:, 0]
    v = interacting_value(x)
    contrib = permutation_contributions(v, len(x), 4, 2000, seed=5)
    signed = contrib.mean(axis=0)
    absolute = np.abs(contrib).mean(axis=0)
    for s in range(len(x)):
        game = lambda c, s=s: float(v(np.array([[j in c for j in range(4)]]), np.array([s]))[0])
        exact_signed = exact_shapley(game, 4)
        exact_abs = exact_shapley(game, 4, absolute=True)
        scale = np.abs(exact_signed).max()
        assert np.allclose(signed[s], exact_signed, atol=0.05 * scale)
        assert np.allclose(absolute[s], exact_abs, atol=0.05 * exact_abs.max())
        assert exact_abs[3] == 0 and absolute[s, 3] == 0


def test_duplicated_symmetric_features_get_equal_importance():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(20, 4))
    x[:, 1] = x[:, 0]
    q = np.abs(permutation_contributions(interacting_value(x), 20, 4, 2000, seed=2)).mean(axis=(0, 1))
    assert abs(q[0] - q[1]) <= 0.05 * max(q[0], q[1])


@given(st.integers(1, 7), st.integers(1, 6), st.integers(1, 5), st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_contributions_telescope_to_full_minus_empty(n_players, n_samples, n_perm, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n_samples, n_players))
    w = rng.normal(size=(n_players, n_players))

    def v(masks, idx):
        xs = np.where(masks, x[idx], 0.3)
        return np.einsum("ri,ij,rj->r", xs, w, xs) + np.sin(xs).sum(1)

    contrib = permutation_contributions(v, n_samples, n_players, n_perm, seed)
    full = v(np.ones((n_samples, n_players), bool), np.arange(n_samples))
    empty = v(np.zeros((n_samples, n_players), bool), np.arange(n_samples))
    assert np.allclose(contrib.sum(axis=2), (full - empty)[None, :], atol=1e-10)


def test_efficiency_against_enumeration_oracle():
    model, enc = additive_model(4, seed=2)
    probe = enc.take(np.arange(5))
    ref = model.space.reference()
    signed = permutation_contributions(
        lambda masks, idx: logits(
            model,
            EncodedBatch(probe.cat[idx], np.where(masks, probe.buckets[idx], ref[0]), np.where(masks, probe.dense[idx], ref[1])),
        ),
        5,
        4,
        3,
        seed=0,
    )
    for s in range(5):

        def game(c, s=s):
            b = np.where([j in c for j in range(4)], probe.buckets[s], ref[0])
            z = np.where([j in c for j in range(4)], probe.dense[s], ref[1])
            return float(model.forward(EncodedBatch(probe.cat[s : s + 1], b[None], z[None]))[0][0])

        phi = exact_shapley(game, 4)
        assert signed[:, s].sum(axis=1) == pytest.approx(np.full(3, phi.sum()), abs=1e-10)


def test_estimate_is_deterministic_and_checks_probe(small):
    _, _, space, enc = small
    model = build_model(ModelSpec("dnn", 2, (4,)), space, 0)
    cfg = ShapleyConfig(n_permutations=8, n_probe=40, seed=4)
    assert np.array_equal(estimate_shapley(model, enc, cfg), estimate_shapley(model, enc, cfg))
    with pytest.raises(EmptyProbeSet):
        estimate_shapley(model, enc.take(np.arange(0)), cfg)
    with pytest.raises(ValueError):
        ShapleyConfig(n_permutations=0)
    with pytest.raises(ValueError):
        ShapleyConfig(n_probe=0)


def test_disturb_distribution_examples():
    assert disturb_distribution([2, 1, 1], [True] * 3).tolist() == [0.5, 0.25, 0.25]
    assert disturb_distribution([0, 0], [True, True]).tolist() == [0.5, 0.5]
    assert np.allclose(disturb_distribution([2, 1, 1], [True, False, True]), [2 / 3, 0, 1 / 3])
    assert disturb_distribution([5, 1, 1], [True, True, False], uniform=True).tolist() == [0.5, 0.5, 0.0]
    with pytest.raises(NoEligibleFields):
        disturb_distribution([1, 2], [False, False])
    with pytest.raises(ValueError):
        disturb_distribution([-1, 2], [True, True])


@given(
    st.lists(st.tuples(st.floats(0, 100, allow_nan=False), st.booleans()), min_size=1, max_size=10).filter(
        lambda xs: any(e for _, e in xs)
    )
)
@settings(max_examples=100, deadline=None)
def test_disturb_distribution_properties(pairs):
    q = np.array([a for a, _ in pairs])
    eligible = np.array([e for _, e in pairs])
    p = disturb_distribution(q, eligible)
    assert np.all(p[~eligible] == 0)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    idx = np.flatnonzero(eligible)
    for a in idx:
        for b in idx:
            if q[a] < q[b]:
                assert p[a] <= p[b]
    if q[eligible].sum() > 0:
        assert np.allclose(p[eligible], q[eligible] / q[eligible].sum())


def test_sample_one_hot_and_seeded():
    p = np.array([0.0, 1.0, 0.0])
    assert set(sample_disturb_fields(p, rng_from_seed(0), 500).tolist()) == {1}
    a = sample_disturb_fields(np.array([0.2, 0.3, 0.5]), rng_from_seed(7), 100)
    b = sample_disturb_fields(np.array([0.2, 0.3, 0.5]), rng_from_seed(7), 100)
    assert np.array_equal(a, b)
    rng = rng_from_seed(3)
    assert [sample_disturb_field(p, rng) for _ in range(5)] == [1] * 5


def test_sample_frequencies_within_three_sigma():
    p = np.array([0.5, 0.25, 0.25])
    n = 10_000
    counts = np.bincount(sample_disturb_fields(p, rng_from_seed(11), n), minlength=3)
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sigma)


def test_sampling_never_picks_zero_mass():
    p = np.array([0.0, 0.5, 0.0, 0.5])
    draws = sample_disturb_fields(p, rng_from_seed(1), 5000)
    assert set(np.unique(draws).tolist()) == {1, 3}


def test_profile_roundtrip_and_ranking(tmp_path, small):
    _, _, space, enc = small
    model = build_model(ModelSpec("dnn", 2, (4,)), space, 1)
    prof = compute_importance(model, enc, ShapleyConfig(4, 30, 0))
    path = tmp_path / "imp.json"
    prof.save(path)
    back = ImportanceProfile.load(path)
    assert back.names == prof.names
    assert np.array_equal(back.q, prof.q) and np.array_equal(back.p, prof.p)
    assert np.array_equal(back.eligible, prof.eligible)
    r = prof.ranking()
    assert [prof.q[i] for i in r] == sorted(prof.q[r], reverse=True)
    assert prof.top(2) == r[:2]
    assert prof.uniform().tolist() == [1 / 3] * 3
