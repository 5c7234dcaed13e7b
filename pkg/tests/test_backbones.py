import numpy as np
import pytest
from conftest import tiny_model
from scipy.special import expit

from mono_ctr.backbones import Model, ModelSpec, build_model, logits, model_gradients, param_layout, predict
from mono_ctr.errors import ShapeMismatch, UnsupportedKind
from mono_ctr.features import EncodedBatch, FeatureSchema, FieldSpec, fit_features
from mono_ctr.numcore import finite_diff_check
from mono_ctr.trainer import TrainConfig, bce_logit_grad, train

KINDS = ("dnn", "wide_deep", "dcn")


def mean_bce(model, batch):
    def fn(store):
        model.store = store
        return model_gradients(model, batch, lambda z: _mean(bce_logit_grad(z, batch.labels)))

    return fn


def _mean(pair):
    loss, g = pair
    return loss.mean(), g / len(g)


def test_default_dimensions_and_table_shapes(small):
    _, _, space, _ = small
    spec = ModelSpec()
    assert spec.embed_dim == 32 and spec.hidden == (512, 255, 127, 127)
    schema = FeatureSchema((FieldSpec("item", "categorical", vocab_size=100), FieldSpec("x", "numerical", direction="increasing")))
    sp = fit_features(schema, {"item": [str(i) for i in range(50)], "x": np.arange(50.0)})
    layout = dict((n, s) for n, s, _ in param_layout(spec, sp))
    assert layout["emb/item"] == (100, 32)
    assert layout["emb/x"] == (10, 32)
    assert ModelSpec("dcn").cross_depth == 3


@pytest.mark.parametrize("kind", KINDS)
def test_input_width(small, kind):
    _, _, space, enc = small
    m = tiny_model(space, kind)
    width = (space.n_categorical + space.n_numerical) * 3 + space.n_numerical
    assert m.input_width == width
    assert m.forward(enc.take(np.arange(4)))[1]["z"].shape == (4, width)
    assert m.store["mlp/W0"].shape[0] == width


def test_dcn_has_three_cross_layers(small):
    _, _, space, _ = small
    m = build_model(ModelSpec("dcn", 2, (4,)), space, 0)
    assert sorted(n for n in m.store.names() if n.startswith("cross/w")) == ["cross/w0", "cross/w1", "cross/w2"]


def test_optional_kinds_unsupported(small):
    _, _, space, _ = small
    for kind in ("deepfm", "pnn"):
        with pytest.raises(UnsupportedKind):
            build_model(ModelSpec(kind, 2, (3,)), space, 0)
    with pytest.raises(UnsupportedKind):
        ModelSpec("transformer")


@pytest.mark.parametrize("kind", KINDS)
def test_zero_output_layer_gives_half(small, kind):
    _, _, space, enc = small
    m = tiny_model(space, kind)
    for name in m.store.names():
        if name.startswith(("out/", "wide/")):
            m.store.params[name][...] = 0.0
    p = predict(m, enc)
    assert np.all(p == 0.5)


@pytest.mark.parametrize("kind", KINDS)
def test_predictions_in_open_interval_and_equivariant(small, kind):
    _, _, space, enc = small
    m = tiny_model(space, kind, seed=4)
    p = predict(m, enc)
    assert np.all((p > 0) & (p < 1))
    perm = np.random.default_rng(0).permutation(len(enc))
    assert np.array_equal(predict(m, enc.take(perm)), p[perm])


def test_chunked_logits_match_single_pass(small):
    _, _, space, enc = small
    m = tiny_model(space, "dcn")
    # BLAS blocking depends on the row count, so only the last ulp may differ
    assert np.allclose(logits(m, enc, chunk=37), m.forward(enc)[0], rtol=1e-12, atol=1e-14)


def test_shape_mismatch(small):
    _, _, space, enc = small
    m = tiny_model(space)
    with pytest.raises(ShapeMismatch):
        m.forward(EncodedBatch(enc.cat[:3, :1], enc.buckets[:3], enc.dense[:3]))
    with pytest.raises(ShapeMismatch):
        m.forward(enc.take(np.arange(0)))


def test_bce_logit_derivative_is_p_minus_y():
    z = np.array([-2.0, -0.3, 0.0, 1.7])
    y = np.array([1.0, 0.0, 1.0, 0.0])
    _, g = bce_logit_grad(z, y)
    assert np.allclose(g, expit(z) - y, atol=1e-15)


@pytest.mark.parametrize("kind", KINDS)
def test_backbone_gradients_match_finite_differences(small, kind):
    _, _, space, enc = small
    m = tiny_model(space, kind, seed=2, embed_dim=2, hidden=(4, 3))
    batch = enc.take(np.arange(6))
    assert finite_diff_check(mean_bce(m, batch), m.store) < 1e-5


@pytest.mark.parametrize("kind", KINDS)
def test_batch_gradient_is_mean_of_singletons(small, kind):
    _, _, space, enc = small
    m = tiny_model(space, kind, seed=3)
    fn = lambda b: model_gradients(m, b, lambda z: _mean(bce_logit_grad(z, b.labels)))[1]
    g2 = fn(enc.take(np.arange(2)))
    g_a, g_b = fn(enc.row(0)), fn(enc.row(1))
    for name in g2:
        assert np.allclose(g2[name], (g_a[name] + g_b[name]) / 2, rtol=1e-12, atol=1e-15)


def test_embedding_gradient_is_sparse(small):
    _, _, space, enc = small
    m = tiny_model(space, "dnn", seed=1)
    batch = enc.take(np.arange(5))
    _, grads = model_gradients(m, batch, lambda z: _mean(bce_logit_grad(z, batch.labels)))
    for i, f in enumerate(space.schema.categorical):
        touched = set(batch.cat[:, i].tolist())
        rows = set(np.flatnonzero(np.abs(grads[f"emb/{f.name}"]).sum(1)).tolist())
        assert rows <= touched
    for j, f in enumerate(space.schema.numerical):
        touched = set(batch.buckets[:, j].tolist())
        rows = set(np.flatnonzero(np.abs(grads[f"emb/{f.name}"]).sum(1)).tolist())
        assert rows <= touched


def test_wide_deep_with_frozen_zero_wide_equals_dnn(small):
    _, _, space, enc = small
    dnn = build_model(ModelSpec("dnn", 3, (6,)), space, 5)
    wd = build_model(ModelSpec("wide_deep", 3, (6,)), space, 5)
    wide = frozenset(n for n in wd.store.names() if n.startswith("wide/"))
    for n in wide:
        assert not wd.store[n].any()
    assert np.array_equal(predict(dnn, enc), predict(wd, enc))
    wd = Model(wd.spec, space, wd.store, frozen=wide)
    cfg = TrainConfig(epochs=2, batch_size=64, ccss_enabled=False, seed=3)
    dnn, _ = train(cfg, enc, space, model=dnn)
    wd, _ = train(cfg, enc, space, model=wd)
    for n in wide:
        assert not wd.store[n].any()
    assert np.array_equal(predict(dnn, enc), predict(wd, enc))


def test_dcn_cross_identity_with_zero_weights(small):
    _, _, space, enc = small
    m = tiny_model(space, "dcn")
    for name in m.store.names():
        if name.startswith("cross/"):
            m.store.params[name][...] = 0.0
    _, cache = m.forward(enc)
    assert np.array_equal(cache["xs"][-1], cache["z"])


def test_init_is_deterministic_per_seed(small):
    _, _, space, enc = small
    assert np.array_equal(predict(tiny_model(space, "dcn", seed=9), enc), predict(tiny_model(space, "dcn", seed=9), enc))
    assert not np.array_equal(predict(tiny_model(space, "dcn", seed=9), enc), predict(tiny_model(space, "dcn", seed=8), enc))
