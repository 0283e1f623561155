import numpy as np
import pytest
from scipy.special import erf

from efoent import autodiff as ad
from efoent.autodiff import Tape, Tensor
from efoent.model import (
    ModelConfig,
    ModelError,
    TegaModel,
    TokenVocab,
    attention_layer,
    bias_index,
    free_variable_pool,
    load_frozen_embeddings,
    lookup_bias,
    positions_mask,
    save_embeddings,
    score_entities,
    sinusoidal,
)
from efoent.syntax import Token, TOKEN_KINDS, tokenize
from efoent.templates import QUERY_TYPES, max_template_length

from conftest import density_graph, random_grounding

N_ENT, N_REL = 10, 3


def tiny(pe_kind="logirpe", **kw):
    cfg = dict(n_entities=N_ENT, n_relations=N_REL, d_model=16, n_layers=2, n_heads=1, d_ff=24,
               pe_kind=pe_kind, dropout=0.0, dtype="float64")
    cfg.update(kw)
    return TegaModel(ModelConfig(**cfg), seed=3)


@pytest.fixture(scope="module")
def queries():
    rng = np.random.default_rng(0)
    kg = density_graph(N_ENT, N_REL, 0.2, rng)
    return {name: random_grounding(q.template, kg, rng) for name, q in QUERY_TYPES.items()}


def layer_inputs(model, query, offsets=None):
    batch = model.batch([query], offsets)
    return batch, model.embed(batch)


def test_config_validation():
    with pytest.raises(ModelError, match="divisible"):
        ModelConfig(10, 2, d_model=30, n_heads=4)
    with pytest.raises(ModelError):
        ModelConfig(10, 2, pe_kind="rotary")
    with pytest.raises(ModelError):
        ModelConfig(10, 2, pooling="median")
    with pytest.raises(ModelError, match="longest template"):
        ModelConfig(10, 2, max_seq_len=10)
    c = ModelConfig(10, 2)
    assert (c.d_model, c.n_layers, c.d_ff, c.max_seq_len, c.pooling) == (400, 3, 1600, max_template_length(), "sum")


def test_bank_shapes():
    assert tiny("logirpe").params["layer0.bank_k"].shape == (6, 6, max_template_length(), 16)
    assert tiny("relative").params["layer1.bank_v"].shape == (1, 1, max_template_length(), 16)
    assert "layer0.bank_k" not in tiny("absolute").params


def test_vocab_rows():
    v = TokenVocab(4, 2, 3)
    assert len(v) == v.n_special + 6
    assert v.token_id(Token("entity", "s:3")) == v.n_special + 3
    assert v.token_id(Token("relation", "r:1")) == v.n_special + 5
    assert v.token_id(Token("entity", "e2")) == v.index["e2"]
    for bad in ("s:4", "r:2", "s1"):
        with pytest.raises(ModelError, match="unknown token"):
            v.token_id(Token("entity", bad))


def test_lookup_bias():
    bank = np.random.default_rng(0).normal(size=(6, 6, 5, 2))
    a = lookup_bias(bank, "entity", "relation", 4)
    b = lookup_bias(bank, "relation", "entity", 4)
    assert not np.array_equal(a, b)
    assert np.array_equal(lookup_bias(bank, "entity", "relation", 99), a)
    assert np.array_equal(lookup_bias(np.zeros((6, 6, 5, 2)), 1, 2, 3), np.zeros(2))
    with pytest.raises(ValueError):
        lookup_bias(bank, 0, 0, -1)


def test_bias_index_matches_lookup():
    bank = np.random.default_rng(1).normal(size=(6, 6, 7, 3))
    types = np.array([[0, 2, 3, 1, 5]])
    idx = bias_index(types, "logirpe", 7)
    flat = bank.reshape(-1, 3)
    for i in range(5):
        for j in range(5):
            assert np.array_equal(flat[idx[0, i, j]], lookup_bias(bank, types[0, i], types[0, j], abs(i - j)))
    assert bias_index(types, "absolute", 7) is None
    rel = bias_index(types, "relative", 3)
    assert rel[0, 0, 4] == 2 and rel[0, 4, 0] == 2


def test_zero_bank_collapse(queries):
    model = tiny("logirpe")
    batch, x = layer_inputs(model, queries["pni"])
    params = dict(model.layer_params(0))
    params["bank_k"] = Tensor(np.zeros_like(params["bank_k"].data))
    params["bank_v"] = Tensor(np.zeros_like(params["bank_v"].data))
    plain = {k: v for k, v in params.items() if not k.startswith("bank")}
    zero_rel = dict(plain, bank_k=Tensor(np.zeros((1, 1, 55, 16))), bank_v=Tensor(np.zeros((1, 1, 55, 16))))
    mask = batch.valid[:, None, :]
    a = attention_layer(x, batch.types, params, "logirpe", 1, mask)
    b = attention_layer(x, batch.types, zero_rel, "relative", 1, mask)
    c = attention_layer(x, batch.types, plain, "absolute", 1, mask)
    assert np.array_equal(a.out.data, b.out.data)
    assert np.array_equal(a.out.data, c.out.data)
    assert np.array_equal(a.logits, c.logits)


def norm(h, g, b):
    return (h - h.mean(-1, keepdims=True)) / np.sqrt(h.var(-1, keepdims=True) + 1e-5) * g + b


def test_attention_matches_reference(queries):
    # independent single-head loop over (i, j) pairs
    model = tiny("logirpe")
    batch, x = layer_inputs(model, queries["2in"])
    p = model.layer_params(0)
    X = x.data[0]
    t = batch.types[0]
    n = len(t)
    Q, K, V = X @ p["wq"].data, X @ p["wk"].data, X @ p["wv"].data
    bk, bv = p["bank_k"].data, p["bank_v"].data
    e = np.array([[Q[i] @ (K[j] + lookup_bias(bk, t[i], t[j], abs(i - j))) for j in range(n)] for i in range(n)]) / 4.0
    a = np.exp(e - e.max(axis=1, keepdims=True))
    a /= a.sum(axis=1, keepdims=True)
    z = np.array([sum(a[i, j] * (V[j] + lookup_bias(bv, t[i], t[j], abs(i - j))) for j in range(n)) for i in range(n)])
    res = attention_layer(x, batch.types, p, "logirpe", 1)
    assert np.allclose(res.logits[0, 0], e, atol=1e-12)
    assert np.allclose(res.weights[0, 0], a, atol=1e-12)
    attn = z @ p["wo"].data
    h = X + attn
    h = norm(h, p["ln1_g"].data, p["ln1_b"].data)
    u = h @ p["w1"].data + p["b1"].data
    ff = 0.5 * u * (1 + erf(u / np.sqrt(2))) @ p["w2"].data + p["b2"].data
    assert np.allclose(res.out.data[0], norm(h + ff, p["ln2_g"].data, p["ln2_b"].data), atol=1e-10)


@pytest.mark.parametrize("pe_kind", ["relative", "logirpe"])
def test_shift_invariance(queries, pe_kind):
    model = tiny(pe_kind)
    q = queries["3in"]
    n = len(tokenize(q))
    batch = model.batch([q, q], offsets=[0, 4])
    collected = []
    model.encode(batch, collect=collected)
    for res in collected:
        first = res.logits[0, :, :n, :n]
        moved = res.logits[1, :, 4:4 + n, 4:4 + n]
        assert np.allclose(first, moved, rtol=0, atol=1e-12)
    assert np.allclose(collected[-1].out.data[0, :n], collected[-1].out.data[1, 4:4 + n], atol=1e-12)


def test_absolute_changes_under_shift(queries):
    model = tiny("absolute")
    q = queries["3in"]
    n = len(tokenize(q))
    res = []
    model.encode(model.batch([q, q], offsets=[0, 4]), collect=res)
    assert not np.allclose(res[0].logits[0, :, :n, :n], res[0].logits[1, :, 4:4 + n, 4:4 + n])


def test_sinusoidal_values():
    pe = sinusoidal(3, 4)
    assert pe[0].tolist() == [0.0, 1.0, 0.0, 1.0]
    assert pe[1, 0] == pytest.approx(np.sin(1.0))
    assert pe[1, 3] == pytest.approx(np.cos(1.0 / 100.0))


def test_sequence_too_long():
    model = tiny()
    with pytest.raises(ModelError, match="max_seq_len"):
        model.batch(["r:0(s:1,f)"], offsets=[60])


def test_type_mismatch():
    model = tiny()
    batch, x = layer_inputs(model, "r:0(s:1,f)")
    with pytest.raises(ModelError):
        attention_layer(x, batch.types[:, :3], model.layer_params(0), "logirpe", 1)


def test_pool_single_position():
    h = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
    m = positions_mask(4, [2])
    for mode in ("sum", "mean", "max"):
        assert np.array_equal(free_variable_pool(h, m, mode).data, h.data[2])


def test_pool_identical_rows():
    row = np.array([1.0, -2.0, 0.5])
    h = Tensor(np.stack([row, np.zeros(3), row]))
    m = positions_mask(3, [0, 2])
    assert np.array_equal(free_variable_pool(h, m, "sum").data, 2 * row)
    assert np.array_equal(free_variable_pool(h, m, "mean").data, row)
    assert np.array_equal(free_variable_pool(h, m, "max").data, row)


def test_pool_errors():
    with pytest.raises(ModelError):
        positions_mask(3, [])
    with pytest.raises(ModelError):
        free_variable_pool(Tensor(np.ones((3, 2))), np.zeros(3, bool))
    with pytest.raises(ModelError):
        free_variable_pool(Tensor(np.ones((3, 2))), np.ones(3, bool), "median")


@pytest.mark.parametrize("mode", ["sum", "mean", "max"])
def test_pool_gradient_locality(mode):
    rng = np.random.default_rng(2)
    h = Tensor(rng.normal(size=(2, 5, 4)), requires_grad=True)
    m = np.zeros((2, 5), bool)
    m[0, [1, 3]] = True
    m[1, 4] = True
    base = free_variable_pool(h, m, mode).data
    bumped = h.data.copy()
    bumped[~m] += 10.0
    assert np.array_equal(free_variable_pool(Tensor(bumped), m, mode).data, base)
    with Tape() as tape:
        y = ad.sum_(free_variable_pool(h, m, mode))
    tape.backward(y)
    assert np.all(h.grad[~m] == 0.0)


def test_score_entities():
    table = Tensor(np.eye(4))
    assert int(np.argmax(score_entities(Tensor(np.eye(4)[2]), table).data)) == 2
    zero = score_entities(Tensor(np.zeros(4)), Tensor(np.random.default_rng(0).normal(size=(5, 4)))).data
    assert np.all(zero == zero[0])
    s = score_entities(Tensor([[0.3, -1.0, 2.0, 0.1]]), Tensor(np.random.default_rng(1).normal(size=(6, 4)))).data
    assert np.array_equal(np.argsort(s), np.argsort(s + 7.5))


@pytest.mark.parametrize("pe_kind", ["absolute", "relative", "logirpe"])
def test_shapes_for_all_templates(queries, pe_kind):
    model = tiny(pe_kind, use_adjacency_mask=pe_kind == "logirpe")
    names = sorted(queries)
    batch = model.batch([queries[n] for n in names])
    hidden = model.encode(batch)
    assert hidden.shape == (55, batch.ids.shape[1], 16)
    for b, n in enumerate(names):
        single = model.encode(model.batch([queries[n]]))
        assert single.shape == (1, len(tokenize(queries[n])), 16)
    logits = model.forward(batch)
    assert logits.shape == (55, N_ENT)
    # chunks pad to different lengths, so only rounding may differ
    assert np.allclose(model.scores([queries[n] for n in names], chunk=7), logits.data, rtol=0, atol=1e-12)


def test_end_to_end_gradient(queries):
    model = tiny("logirpe")
    qs = [queries["2in"], queries["pi"], queries["2u"]]
    targets = [[1], [2, 5], [0]]
    batch = model.batch(qs)

    def loss_value():
        return float(ad.label_smoothed_cross_entropy(model.forward(batch), targets, 0.1).data)

    for p in model.params.values():
        p.grad = None
    with Tape() as tape:
        loss = ad.label_smoothed_cross_entropy(model.forward(batch), targets, 0.1)
    tape.backward(loss)
    rng = np.random.default_rng(0)
    h = 1e-5
    for name, p in model.params.items():
        grad = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        # coordinates that carry gradient plus a few random ones
        hot = np.flatnonzero(grad.reshape(-1))
        pick = np.concatenate([rng.choice(hot, size=min(6, len(hot)), replace=False) if len(hot) else [],
                               rng.choice(flat.size, size=3, replace=False)]).astype(int)
        for k in pick:
            old = flat[k]
            flat[k] = old + h
            up = loss_value()
            flat[k] = old - h
            down = loss_value()
            flat[k] = old
            num = (up - down) / (2 * h)
            got = grad.reshape(-1)[k]
            assert abs(got - num) <= 1e-4 * max(abs(num), abs(got), 1e-3), (name, k, got, num)


def test_frozen_embeddings(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "emb.ckpt"
    ent, rel = rng.normal(size=(N_ENT, 16)), rng.normal(size=(N_REL, 16))
    save_embeddings(path, ent, rel)
    model = tiny(frozen_embeddings=str(path))
    assert np.array_equal(model.params["emb.entity"].data, ent)
    assert not model.params["emb.entity"].requires_grad
    assert model.params["emb.special"].requires_grad
    with Tape() as tape:
        loss = ad.label_smoothed_cross_entropy(model.forward(model.batch(["r:0(s:1,f)"])), [[2]], 0.1)
    tape.backward(loss)
    assert model.params["emb.entity"].grad is None
    assert model.params["emb.relation"].grad is None
    assert model.params["emb.special"].grad is not None
    before = model.params["emb.entity"].data.copy()
    opt = ad.Adam(model.trainable(), lr=0.1, warmup=0)
    opt.step()
    assert np.array_equal(model.params["emb.entity"].data, before)


def test_frozen_embedding_mismatch(tmp_path):
    rng = np.random.default_rng(0)
    wide = tmp_path / "wide.ckpt"
    save_embeddings(wide, rng.normal(size=(N_ENT, 32)), rng.normal(size=(N_REL, 32)))
    with pytest.raises(ModelError, match="width"):
        tiny(frozen_embeddings=str(wide))
    short = tmp_path / "short.ckpt"
    save_embeddings(short, rng.normal(size=(N_ENT - 1, 16)), rng.normal(size=(N_REL, 16)))
    with pytest.raises(ModelError, match="rows"):
        tiny(frozen_embeddings=str(short))
    named = tmp_path / "named.ckpt"
    save_embeddings(named, rng.normal(size=(N_ENT, 16)), rng.normal(size=(N_REL, 16)),
                    entity_names=[f"x{i}" for i in range(N_ENT)])
    m = TegaModel(ModelConfig(N_ENT, N_REL, d_model=16, n_layers=1, n_heads=1),
                  entity_names=[f"y{i}" for i in range(N_ENT)])
    with pytest.raises(ModelError, match="names"):
        load_frozen_embeddings(m, named)


def test_save_load_round_trip(tmp_path, queries):
    model = tiny("relative", pooling="max")
    path = tmp_path / "m.ckpt"
    model.save(path)
    again = TegaModel.load(path)
    assert again.config == model.config
    qs = [queries["2p"], queries["3c"]]
    assert np.array_equal(again.scores(qs), model.scores(qs))


def test_deterministic_init(queries):
    a, b = tiny(), tiny()
    assert np.array_equal(a.scores([queries["ip"]]), b.scores([queries["ip"]]))


def test_token_kinds_cover_six_types():
    assert len(TOKEN_KINDS) == 6
