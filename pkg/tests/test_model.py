import numpy as np
import pytest

from fd import numeric_grad, rel_err
from hhar import diffcore as dc
from hhar import model as M
from hhar.hierarchy import expand_label_set, is_valid_path
from hhar.model import Model, ModelConfig


def small_model(h, rng, d=5, width=3, **kw):
    cfg = ModelConfig(n_features=d, n_nodes=len(h), d_label=width, d_conv=width, d_data=width,
                      d_adaptive=width, d_proj=width, **kw)
    return Model.create(cfg, h, rng)


def test_zero_weights_give_zero_label_embeddings(four_node, rng):
    m = small_model(four_node, rng)
    m.store["label_wp"].values[...] = 0
    m.store["label_wadp"].values[...] = 0
    E_L = M.label_encoder_forward(m.store, m.graphs.A_norm, m.graphs.adaptive())
    assert np.array_equal(E_L.values, np.zeros((4, 3)))


def test_identity_propagation(four_node, rng):
    m = small_model(four_node, rng)
    s = m.store
    s["label_emb"].values[...] = np.abs(s["label_emb"].values)
    s["label_wp"].values[...] = np.eye(3)
    s["label_wadp"].values[...] = 0
    s["adp_src"].values[...] = 0
    s["adp_dst"].values[...] = 0
    E_L = M.label_encoder_forward(s, dc.Tensor(np.eye(4)), m.graphs.adaptive())
    np.testing.assert_allclose(E_L.values, s["label_emb"].values)


def test_label_encoder_gradient(four_node, rng):
    m = small_model(four_node, rng)
    s = m.store
    readout = rng.normal(size=(4, 3))

    def f():
        return float((M.label_encoder_forward(s, m.graphs.A_norm, m.graphs.adaptive()).values * readout).sum())

    s.zero_grad()
    dc.sum(M.label_encoder_forward(s, m.graphs.A_norm, m.graphs.adaptive()) * readout).backward()
    for name in ("label_emb", "label_wp", "label_wadp", "adp_src", "adp_dst"):
        assert rel_err(s[name].grad, numeric_grad(f, s[name].values)) < 1e-4, name


def test_empty_batch(four_node, rng):
    m = small_model(four_node, rng)
    E_X = M.data_encoder_forward(m.store, m.graphs.A_norm, m.graphs.adaptive(), np.zeros((0, 5)))
    assert E_X.shape == (0, 4, 3)
    assert m.forward(np.zeros((0, 5))).P.shape == (0, 4)


def test_zero_data_weights(four_node, rng):
    m = small_model(four_node, rng)
    for name in ("embed_w", "res_w", "data_wp", "data_wadp"):
        m.store[name].values[...] = 0
    E_X = M.data_encoder_forward(m.store, m.graphs.A_norm, m.graphs.adaptive(), rng.normal(size=(3, 5)))
    assert np.array_equal(E_X.values, np.zeros((3, 4, 3)))


def test_data_encoder_gradient_wrt_res_and_inputs(four_node, rng):
    m = small_model(four_node, rng)
    s = m.store
    X = rng.normal(size=(3, 5))
    readout = rng.normal(size=(3, 4, 3))

    def f():
        return float((M.data_encoder_forward(s, m.graphs.A_norm, m.graphs.adaptive(), X).values * readout).sum())

    xt = dc.Tensor(X, requires_grad=True)
    dc.sum(M.data_encoder_forward(s, m.graphs.A_norm, m.graphs.adaptive(), xt) * readout).backward()
    assert rel_err(s["res_w"].grad, numeric_grad(f, s["res_w"].values)) < 1e-4
    assert rel_err(xt.grad, numeric_grad(f, X)) < 1e-4


def test_feature_width_checked(four_node, rng):
    m = small_model(four_node, rng)
    with pytest.raises(dc.ShapeError, match="width 5"):
        m.forward(np.zeros((2, 4)))


def test_classify_zero_and_saturated(four_node, rng):
    m = small_model(four_node, rng)
    E_X = dc.Tensor(rng.normal(size=(2, 4, 3)))
    m.store["cls_w"].values[...] = 0
    np.testing.assert_array_equal(M.classify(m.store, E_X).values, 0.5)
    m.store["cls_b"].values[...] = 10
    assert (M.classify(m.store, E_X).values > 0.9999).all()


def test_classify_monotone_in_bias(four_node, rng):
    m = small_model(four_node, rng)
    E_X = dc.Tensor(rng.normal(size=(3, 4, 3)))
    lo = M.classify(m.store, E_X).values
    m.store["cls_b"].values += 0.5
    hi = M.classify(m.store, E_X).values
    assert (hi > lo).all()


def test_decode_threshold_is_strict(four_node, rng):
    m = small_model(four_node, rng)
    assert not M.decode(np.full((2, 4), 0.5), m.paths, m.eligible, "multi").any()


def test_decode_single_and_multi(four_node, rng):
    m = small_model(four_node, rng)
    i = four_node.index
    P = np.full((1, 4), 0.01)
    P[0, i("still")] = 0.95
    P[0, i("sitting")] = 0.9
    terminals, sets = M.decode(P, m.paths, m.eligible, "single")
    assert four_node.nodes[terminals[0]] == "sitting"
    multi = M.decode(P, m.paths, m.eligible, "multi")
    assert {four_node.nodes[j] for j in np.flatnonzero(multi[0])} == {"still", "sitting"}
    assert np.array_equal(sets[0], multi[0])


def test_single_mode_always_a_valid_path(four_node):
    for seed in range(20):
        rng = np.random.default_rng(seed)
        m = small_model(four_node, rng)
        terminals, sets = m.predict(rng.normal(size=(6, 5)), "single")
        for t, row in zip(terminals, sets):
            assert is_valid_path(four_node, row)
            assert np.array_equal(row, expand_label_set(four_node, four_node.nodes[t]) > 0.5)


def test_predict_rejects_nan_params(four_node, rng):
    m = small_model(four_node, rng)
    m.store["res_w"].values[0, 0] = np.nan
    with pytest.raises(ValueError, match="NaN"):
        m.predict(np.zeros((1, 5)))


def test_encoders_share_graph_objects(four_node, rng, monkeypatch):
    m = small_model(four_node, rng)
    seen = {}
    real_label, real_data = M.label_encoder_forward, M.data_encoder_forward

    def spy_label(params, adj, adj_adp):
        seen["label"] = (adj, adj_adp)
        return real_label(params, adj, adj_adp)

    def spy_data(params, adj, adj_adp, X, fp=True):
        seen["data"] = (adj, adj_adp)
        return real_data(params, adj, adj_adp, X, fp)

    monkeypatch.setattr(M, "label_encoder_forward", spy_label)
    monkeypatch.setattr(M, "data_encoder_forward", spy_data)
    fp = m.forward(rng.normal(size=(2, 5)), with_labels=True)
    assert seen["label"][0] is seen["data"][0] is fp.adj
    assert seen["label"][1] is seen["data"][1] is fp.adj_adp
    assert fp.adj_adp is not None


def test_forward_finite_over_random_draws(four_node):
    cfg = ModelConfig(n_features=5, n_nodes=4, d_label=4, d_conv=4, d_data=4, d_adaptive=4, d_proj=4)
    X = np.random.default_rng(0).normal(size=(4, 5))
    for seed in range(1000):
        m = Model.create(cfg, four_node, np.random.default_rng(seed))
        fp = m.forward(X, with_labels=True)
        assert np.isfinite(fp.P.values).all() and np.isfinite(fp.E_L.values).all()


def test_forward_deterministic(four_node, rng):
    m = small_model(four_node, rng)
    X = rng.normal(size=(3, 5))
    assert np.array_equal(m.forward(X).P.values, m.forward(X).P.values)


@pytest.mark.parametrize("graphs", M.GRAPH_MODES)
@pytest.mark.parametrize("fp", [True, False])
def test_variant_forward_shapes(four_node, rng, graphs, fp):
    m = small_model(four_node, rng, graphs=graphs, feature_propagation=fp)
    out = m.forward(rng.normal(size=(2, 5)), with_labels=True)
    assert out.E_X.shape == (2, 4, 3) and out.E_L.shape == (4, 3)
    assert (out.adj is None) == (graphs in ("none", "adaptive"))


def test_checkpoint_round_trip_is_exact(tmp_path, four_node, rng):
    m = small_model(four_node, rng)
    M.save_model(tmp_path / "c.bin", m, {"note": "x"})
    again, meta = M.load_model(tmp_path / "c.bin")
    assert meta["note"] == "x"
    assert list(again.store) == list(m.store)
    for name, t in m.store.items():
        assert again.store[name].values.tobytes() == t.values.tobytes()
    assert again.cfg == m.cfg and again.eligible == m.eligible
    M.save_model(tmp_path / "d.bin", again, {"note": "x"})
    assert (tmp_path / "c.bin").read_bytes() == (tmp_path / "d.bin").read_bytes()


def test_checkpoint_rejects_other_files(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValueError, match="not a checkpoint"):
        M.load_checkpoint(p)
