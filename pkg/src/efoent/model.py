"""Transformer encoder over tokenized queries with type-aware relative attention.

Three position schemes are supported. ``absolute`` adds sinusoids to the
input embeddings. ``relative`` learns key and value offset vectors indexed by
token distance ``|i - j|``. ``logirpe`` indexes those vectors by the token
types of both ends as well as the distance. The query embedding is pooled
from the hidden states of the free-variable tokens and scored against the
entity embeddings by dot product.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .query_graph import adjacency_mask, build_query_graph
from .syntax import KIND_INDEX, TOKEN_KINDS, QueryAst, Token, parse_efo, tokenize
from .templates import max_template_length

PE_KINDS = ("absolute", "relative", "logirpe")
POOLING = ("sum", "mean", "max")
N_TYPES = len(TOKEN_KINDS)
PAD = "<pad>"


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    n_entities: int
    n_relations: int
    d_model: int = 400
    n_layers: int = 3
    n_heads: int = 8
    d_ff: int | None = None
    max_seq_len: int = field(default_factory=max_template_length)
    pe_kind: str = "logirpe"
    pooling: str = "sum"
    use_adjacency_mask: bool = False
    frozen_embeddings: str | None = None
    dropout: float = 0.1
    n_variables: int = 3
    dtype: str = "float32"
    init_std: float = 0.02

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ModelError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.pe_kind not in PE_KINDS:
            raise ModelError(f"pe_kind must be one of {PE_KINDS}, got {self.pe_kind!r}")
        if self.pooling not in POOLING:
            raise ModelError(f"pooling must be one of {POOLING}, got {self.pooling!r}")
        if self.max_seq_len < max_template_length():
            raise ModelError(
                f"max_seq_len={self.max_seq_len} is shorter than the longest template ({max_template_length()})"
            )
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------- vocabulary ---


def special_symbols(n_variables: int) -> list[str]:
    return [PAD, "(", ")", "&", "|", "!", "f"] + [f"e{k}" for k in range(1, n_variables + 1)]


class TokenVocab:
    """Maps token symbols to rows of the concatenated embedding table.

    Rows are ordered: structural symbols and variables, then entities, then
    relations. Grounded symbols look like ``s:<entity id>`` and ``r:<relation id>``.
    """

    def __init__(self, n_entities: int, n_relations: int, n_variables: int):
        self.special = special_symbols(n_variables)
        self.index = {s: i for i, s in enumerate(self.special)}
        self.n_special = len(self.special)
        self.n_entities = n_entities
        self.n_relations = n_relations

    def __len__(self) -> int:
        return self.n_special + self.n_entities + self.n_relations

    def entity_row(self, e: int) -> int:
        return self.n_special + e

    def relation_row(self, r: int) -> int:
        return self.n_special + self.n_entities + r

    def token_id(self, tok: Token) -> int:
        sym = tok.symbol
        if sym in self.index:
            return self.index[sym]
        if sym.startswith("s:"):
            e = int(sym[2:])
            if 0 <= e < self.n_entities:
                return self.entity_row(e)
        elif sym.startswith("r:"):
            r = int(sym[2:])
            if 0 <= r < self.n_relations:
                return self.relation_row(r)
        raise ModelError(f"unknown token {sym!r}")


# ------------------------------------------------------------------ batch ---


@dataclass
class Batch:
    ids: np.ndarray  # [B, n] int
    types: np.ndarray  # [B, n] int
    valid: np.ndarray  # [B, n] bool, False on padding
    free: np.ndarray  # [B, n] bool
    adjacency: np.ndarray | None = None  # [B, n, n] bool

    @property
    def size(self) -> int:
        return self.ids.shape[0]


@dataclass(frozen=True)
class EncodedQuery:
    ids: np.ndarray
    types: np.ndarray
    free: np.ndarray
    adjacency: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.ids)


def encode_query(query: QueryAst | str, vocab: TokenVocab, with_adjacency: bool = False) -> EncodedQuery:
    ast = parse_efo(query) if isinstance(query, str) else query
    toks = tokenize(ast)
    adj = adjacency_mask(toks, build_query_graph(ast)) if with_adjacency else None
    return EncodedQuery(
        np.array([vocab.token_id(t) for t in toks], dtype=np.int64),
        np.array([t.type_id for t in toks], dtype=np.int64),
        np.array([t.is_free_variable for t in toks], dtype=bool),
        adj,
    )


def collate(items: Sequence[EncodedQuery], max_len: int, offsets: Sequence[int] | None = None) -> Batch:
    """Right-pad encoded queries; ``offsets`` shifts each sequence inside the buffer."""
    offsets = [0] * len(items) if offsets is None else list(offsets)
    n = max(o + len(t) for o, t in zip(offsets, items))
    if n > max_len:
        raise ModelError(f"sequence of length {n} exceeds max_seq_len={max_len}")
    B = len(items)
    with_adjacency = all(it.adjacency is not None for it in items)
    ids = np.zeros((B, n), dtype=np.int64)
    types = np.zeros((B, n), dtype=np.int64)
    valid = np.zeros((B, n), dtype=bool)
    free = np.zeros((B, n), dtype=bool)
    adjacency = np.ones((B, n, n), dtype=bool) if with_adjacency else None
    for b, (it, o) in enumerate(zip(items, offsets)):
        sl = slice(o, o + len(it))
        ids[b, sl] = it.ids
        types[b, sl] = it.types
        valid[b, sl] = True
        free[b, sl] = it.free
        if with_adjacency:
            adjacency[b, sl, sl] = it.adjacency
    return Batch(ids, types, valid, free, adjacency)


def make_batch(
    queries: Sequence[QueryAst | str],
    vocab: TokenVocab,
    max_len: int,
    with_adjacency: bool = False,
    offsets: Sequence[int] | None = None,
) -> Batch:
    return collate([encode_query(q, vocab, with_adjacency) for q in queries], max_len, offsets)


# ------------------------------------------------------------ positional ---


def sinusoidal(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def bias_index(types: np.ndarray, pe_kind: str, bank_len: int) -> np.ndarray | None:
    """Flat row into a bank for every (i, j) pair of each sequence, ``[B, n, n]``."""
    if pe_kind == "absolute":
        return None
    n = types.shape[-1]
    pos = np.arange(n)
    dist = np.minimum(np.abs(pos[:, None] - pos[None, :]), bank_len - 1)
    if pe_kind == "relative":
        return np.broadcast_to(dist, types.shape[:-1] + (n, n)).copy()
    ti = types[..., :, None]
    tj = types[..., None, :]
    return (ti * N_TYPES + tj) * bank_len + dist


def lookup_bias(bank: np.ndarray, t_i: int | str, t_j: int | str, offset: int) -> np.ndarray:
    """The bias vector stored for a type pair at distance ``offset`` (clamped to the bank)."""
    t_i = KIND_INDEX[t_i] if isinstance(t_i, str) else t_i
    t_j = KIND_INDEX[t_j] if isinstance(t_j, str) else t_j
    if offset < 0:
        raise ValueError("offset must be non-negative; pass |i - j|")
    return bank[t_i, t_j, min(offset, bank.shape[2] - 1)]


# ----------------------------------------------------------------- layers ---


@dataclass
class AttentionOutput:
    out: Tensor
    logits: np.ndarray  # pre-mask e_ij, [B, H, n, n]
    weights: np.ndarray  # attention probabilities


def attention_layer(
    x: Tensor,
    types: np.ndarray,
    params: dict[str, Tensor],
    pe_kind: str,
    n_heads: int,
    mask: np.ndarray | None = None,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> AttentionOutput:
    """Multi-head self-attention with optional key/value biases, then the encoder block.

    ``x`` is ``[B, n, d]`` (or ``[n, d]``), ``types`` the token kinds ``[B, n]``.
    ``mask`` is True where attention is allowed. ``params`` holds ``wq wk wv wo
    w1 b1 w2 b2 ln1_g ln1_b ln2_g ln2_b`` and, unless ``pe_kind`` is
    ``absolute``, ``bank_k`` and ``bank_v``.
    """
    single = x.ndim == 2
    types = np.asarray(types)
    if single:
        x = ad.reshape(x, (1,) + x.shape)
        types = types[None]
        if mask is not None:
            mask = np.asarray(mask)[None]
    B, n, d = x.shape
    if types.shape != (B, n):
        raise ModelError(f"token type array {types.shape} does not match input {(B, n)}")
    H = n_heads
    dh = d // H

    def heads(t):
        return ad.transpose(ad.reshape(t, (B, n, H, dh)), (0, 2, 1, 3))

    q = heads(ad.matmul(x, params["wq"]))
    k = heads(ad.matmul(x, params["wk"]))
    v = heads(ad.matmul(x, params["wv"]))
    logits = ad.matmul(q, ad.transpose(k))  # [B, H, n, n]

    bank_k = params.get("bank_k")
    use_bias = pe_kind != "absolute"
    if use_bias:
        bank_len = bank_k.shape[-2]
        idx = bias_index(types, pe_kind, bank_len)
        flat_k = ad.reshape(bank_k, (-1, dh))
        beta_k = ad.embedding_gather(flat_k, idx)  # [B, n, n, dh]
        qt = ad.transpose(q, (0, 2, 1, 3))  # [B, n, H, dh]
        pb = ad.matmul(qt, ad.transpose(beta_k, (0, 1, 3, 2)))  # [B, n, H, n]
        logits = ad.add(logits, ad.transpose(pb, (0, 2, 1, 3)))
    logits = ad.scale(logits, 1.0 / math.sqrt(dh))
    raw_logits = logits.data

    if mask is not None:
        allowed = np.asarray(mask, dtype=bool)
        if allowed.ndim == 3:
            allowed = allowed[:, None]
        logits = ad.masked_fill(logits, ~allowed)
    alpha = ad.softmax(logits, axis=-1)
    weights = alpha.data
    alpha = ad.dropout(alpha, dropout, rng, training)
    z = ad.matmul(alpha, v)  # [B, H, n, dh]
    if use_bias:
        flat_v = ad.reshape(params["bank_v"], (-1, dh))
        beta_v = ad.embedding_gather(flat_v, idx)
        at = ad.transpose(alpha, (0, 2, 1, 3))  # [B, n, H, n]
        zb = ad.matmul(at, beta_v)  # [B, n, H, dh]
        z = ad.add(z, ad.transpose(zb, (0, 2, 1, 3)))
    z = ad.reshape(ad.transpose(z, (0, 2, 1, 3)), (B, n, d))
    attn = ad.dropout(ad.matmul(z, params["wo"]), dropout, rng, training)

    h = ad.layer_norm(ad.add(x, attn), params["ln1_g"], params["ln1_b"])
    ff = ad.gelu(ad.add(ad.matmul(h, params["w1"]), params["b1"]))
    ff = ad.dropout(ad.add(ad.matmul(ff, params["w2"]), params["b2"]), dropout, rng, training)
    out = ad.layer_norm(ad.add(h, ff), params["ln2_g"], params["ln2_b"])
    if single:
        out = ad.reshape(out, (n, d))
    return AttentionOutput(out, raw_logits, weights)


def free_variable_pool(hidden: Tensor, free_mask, mode: str = "sum") -> Tensor:
    """Pool hidden rows at free-variable positions: ``[B, n, d] -> [B, d]`` (or ``[n, d] -> [d]``)."""
    free_mask = np.asarray(free_mask, dtype=bool)
    if free_mask.shape != hidden.shape[:-1]:
        raise ModelError(f"free mask {free_mask.shape} does not match hidden states {hidden.shape}")
    if not free_mask.any(axis=-1).all():
        raise ModelError("every sequence needs at least one free-variable position")
    m = free_mask[..., None]
    axis = hidden.ndim - 2
    if mode == "sum":
        return ad.sum_(ad.mul(hidden, m.astype(hidden.dtype)), axis=axis)
    if mode == "mean":
        s = ad.sum_(ad.mul(hidden, m.astype(hidden.dtype)), axis=axis)
        count = free_mask.sum(axis=-1, keepdims=True).astype(hidden.dtype)
        return ad.mul(s, 1.0 / count)
    if mode == "max":
        return ad.max_(ad.masked_fill(hidden, ~m), axis=axis)
    raise ModelError(f"unknown pooling mode {mode!r}")


def positions_mask(n: int, positions: Sequence[int]) -> np.ndarray:
    if not len(positions):
        raise ModelError("free_positions is empty")
    m = np.zeros(n, dtype=bool)
    m[list(positions)] = True
    return m


def score_entities(query_vec: Tensor, entity_table: Tensor) -> Tensor:
    """Dot product of each query vector with every entity row."""
    if query_vec.ndim == 1:
        return ad.reshape(ad.matmul(ad.reshape(query_vec, (1, -1)), ad.transpose(entity_table)), (-1,))
    return ad.matmul(query_vec, ad.transpose(entity_table))


# ------------------------------------------------------------------ model ---

_LAYER_PARAMS = ("wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2", "ln1_g", "ln1_b", "ln2_g", "ln2_b")


class TegaModel:
    """Parameters plus forward pass of the query encoder."""

    def __init__(self, config: ModelConfig, seed: int = 0, entity_names=None, relation_names=None):
        self.config = config
        self.vocab = TokenVocab(config.n_entities, config.n_relations, config.n_variables)
        self.entity_names = list(entity_names) if entity_names is not None else None
        self.relation_names = list(relation_names) if relation_names is not None else None
        self.dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(seed)
        self.dropout_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        d, f, std = config.d_model, config.d_ff, config.init_std

        def normal(*shape, s=std):
            return rng.normal(0.0, s, size=shape).astype(self.dtype)

        p: dict[str, Tensor] = {}
        p["emb.special"] = Tensor(normal(self.vocab.n_special, d), requires_grad=True)
        p["emb.entity"] = Tensor(normal(config.n_entities, d), requires_grad=True)
        p["emb.relation"] = Tensor(normal(config.n_relations, d), requires_grad=True)
        for layer in range(config.n_layers):
            pre = f"layer{layer}."
            for name in ("wq", "wk", "wv", "wo"):
                p[pre + name] = Tensor(normal(d, d, s=1.0 / math.sqrt(d)), requires_grad=True)
            p[pre + "w1"] = Tensor(normal(d, f, s=1.0 / math.sqrt(d)), requires_grad=True)
            p[pre + "b1"] = Tensor(np.zeros(f, self.dtype), requires_grad=True)
            p[pre + "w2"] = Tensor(normal(f, d, s=1.0 / math.sqrt(f)), requires_grad=True)
            p[pre + "b2"] = Tensor(np.zeros(d, self.dtype), requires_grad=True)
            for ln in ("ln1", "ln2"):
                p[pre + ln + "_g"] = Tensor(np.ones(d, self.dtype), requires_grad=True)
                p[pre + ln + "_b"] = Tensor(np.zeros(d, self.dtype), requires_grad=True)
            shape = self.bank_shape()
            if shape is not None:
                p[pre + "bank_k"] = Tensor(normal(*shape), requires_grad=True)
                p[pre + "bank_v"] = Tensor(normal(*shape), requires_grad=True)
        for name, t in p.items():
            t.name = name
        self.params = p
        self._pe = sinusoidal(config.max_seq_len, d).astype(self.dtype)
        if config.frozen_embeddings:
            load_frozen_embeddings(self, config.frozen_embeddings)

    def bank_shape(self) -> tuple[int, ...] | None:
        c = self.config
        if c.pe_kind == "logirpe":
            return (N_TYPES, N_TYPES, c.max_seq_len, c.d_head)
        if c.pe_kind == "relative":
            return (1, 1, c.max_seq_len, c.d_head)
        return None

    def layer_params(self, layer: int) -> dict[str, Tensor]:
        pre = f"layer{layer}."
        out = {k: self.params[pre + k] for k in _LAYER_PARAMS}
        if self.config.pe_kind != "absolute":
            out["bank_k"] = self.params[pre + "bank_k"]
            out["bank_v"] = self.params[pre + "bank_v"]
        return out

    def trainable(self) -> list[Tensor]:
        return [t for t in self.params.values() if t.requires_grad]

    def batch(self, queries, offsets=None) -> Batch:
        return make_batch(queries, self.vocab, self.config.max_seq_len, self.config.use_adjacency_mask, offsets)

    def encode_queries(self, queries) -> list[EncodedQuery]:
        return [encode_query(q, self.vocab, self.config.use_adjacency_mask) for q in queries]

    def collate(self, items: Sequence[EncodedQuery]) -> Batch:
        return collate(items, self.config.max_seq_len)

    def embed(self, batch: Batch) -> Tensor:
        table = ad.concat([self.params["emb.special"], self.params["emb.entity"], self.params["emb.relation"]])
        x = ad.embedding_gather(table, batch.ids)
        if self.config.pe_kind == "absolute":
            x = ad.add(x, self._pe[: batch.ids.shape[1]])
        return x

    def encode(self, batch: Batch, training: bool = False, collect: list | None = None) -> Tensor:
        """Hidden states ``[B, n, d]`` after every encoder layer."""
        c = self.config
        x = self.embed(batch)
        mask = batch.valid[:, None, :]  # keys
        if c.use_adjacency_mask and batch.adjacency is not None:
            mask = mask & batch.adjacency
        for layer in range(c.n_layers):
            res = attention_layer(
                x, batch.types, self.layer_params(layer), c.pe_kind, c.n_heads, mask,
                c.dropout, self.dropout_rng, training,
            )
            if collect is not None:
                collect.append(res)
            x = res.out
        return x

    def forward(self, batch: Batch, training: bool = False) -> Tensor:
        """Entity logits ``[B, |E|]``."""
        hidden = self.encode(batch, training)
        pooled = free_variable_pool(hidden, batch.free, self.config.pooling)
        return score_entities(pooled, self.params["emb.entity"])

    def scores(self, queries, chunk: int = 256) -> np.ndarray:
        """Entity logits for query strings, ASTs or encoded queries, without recording gradients."""
        items = [q if isinstance(q, EncodedQuery) else encode_query(q, self.vocab, self.config.use_adjacency_mask)
                 for q in queries]
        out = []
        for lo in range(0, len(items), chunk):
            out.append(self.forward(self.collate(items[lo:lo + chunk])).data)
        return np.concatenate(out) if out else np.zeros((0, self.config.n_entities), self.dtype)

    # --------------------------------------------------------- persistence

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def save(self, path, extra: dict | None = None) -> None:
        meta = {"config": self.config.to_dict(), "frozen": sorted(k for k, t in self.params.items() if not t.requires_grad)}
        if extra:
            meta.update(extra)
        ad.save_tensors(path, self.state(), meta)

    @classmethod
    def load(cls, path) -> "TegaModel":
        arrays, meta = ad.load_tensors(path)
        cfg = dict(meta["config"])
        cfg["frozen_embeddings"] = None
        model = cls(ModelConfig(**cfg))
        missing = set(model.params) - set(arrays)
        if missing:
            raise ad.CheckpointError(f"checkpoint lacks tensors {sorted(missing)}")
        for name, t in model.params.items():
            if arrays[name].shape != t.shape:
                raise ad.CheckpointError(f"tensor {name}: checkpoint shape {arrays[name].shape}, model {t.shape}")
            t.data = arrays[name].astype(model.dtype)
        for name in meta.get("frozen", []):
            model.params[name].requires_grad = False
        model.config.frozen_embeddings = meta["config"].get("frozen_embeddings")
        return model


def load_frozen_embeddings(model: TegaModel, path) -> None:
    """Overwrite entity and relation rows from a checkpoint file and freeze them.

    The file holds ``entity [|E|, d]`` and ``relation [|R|, d]``; when its
    metadata lists ``entity_names``/``relation_names`` they must match the
    model's vocabulary.
    """
    arrays, meta = ad.load_tensors(path)
    for key, count, names in (
        ("entity", model.config.n_entities, model.entity_names),
        ("relation", model.config.n_relations, model.relation_names),
    ):
        if key not in arrays:
            raise ModelError(f"{path}: no '{key}' tensor")
        arr = arrays[key]
        if arr.ndim != 2 or arr.shape[0] != count:
            raise ModelError(f"{path}: {key} table has shape {arr.shape}, expected {count} rows")
        if arr.shape[1] != model.config.d_model:
            raise ModelError(f"{path}: {key} width {arr.shape[1]} does not match d_model={model.config.d_model}")
        file_names = meta.get(f"{key}_names")
        if file_names is not None and names is not None and list(file_names) != list(names):
            raise ModelError(f"{path}: {key} names do not match the graph vocabulary")
        t = model.params[f"emb.{key}"]
        t.data = arr.astype(model.dtype)
        t.requires_grad = False
        t.grad = None


def save_embeddings(path, entity: np.ndarray, relation: np.ndarray, entity_names=None, relation_names=None) -> None:
    meta = {}
    if entity_names is not None:
        meta["entity_names"] = list(entity_names)
    if relation_names is not None:
        meta["relation_names"] = list(relation_names)
    ad.save_tensors(path, {"entity": entity, "relation": relation}, meta)
