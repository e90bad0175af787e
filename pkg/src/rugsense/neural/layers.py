"""Model blocks as functions of a ParamStore and dense inputs."""

from __future__ import annotations

import numpy as np

from .inputs import EDGE_TYPES, NODE_TYPES, VOCAB_SIZE, CodeInput, TxInput
from .params import ParamStore
from .tensor import (
    Tensor,
    as_tensor,
    concat,
    dropout,
    layernorm,
    matmul,
    relu,
    softmax,
    tanh,
)

# ---------------------------------------------------------------------------
# initialisation


def init_block_encoder(ps: ParamStore, rng: np.random.Generator, dim: int, layers: int, ff: int, max_len: int) -> None:
    ps.add("enc.tok", rng.normal(0.0, 0.3, size=(VOCAB_SIZE, dim)))
    ps.add("enc.pos", rng.normal(0.0, 0.05, size=(max_len, dim)))
    for i in range(layers):
        p = f"enc.l{i}"
        ps.ones(f"{p}.ln1.g", (dim,))
        ps.zeros(f"{p}.ln1.b", (dim,))
        for w in ("q", "k", "v", "o"):
            ps.uniform(f"{p}.{w}", (dim, dim), rng)
        ps.ones(f"{p}.ln2.g", (dim,))
        ps.zeros(f"{p}.ln2.b", (dim,))
        ps.uniform(f"{p}.ff1", (dim, ff), rng)
        ps.zeros(f"{p}.ff1.b", (ff,))
        ps.uniform(f"{p}.ff2", (ff, dim), rng)
        ps.zeros(f"{p}.ff2.b", (dim,))
    ps.ones("enc.lnf.g", (dim,))
    ps.zeros("enc.lnf.b", (dim,))


def init_rgcn(ps: ParamStore, rng: np.random.Generator, dims: list[int]) -> None:
    # unit scale so node types are not drowned by the layer-normed block encodings
    ps.add("rgcn.type_emb", rng.normal(0.0, 1.0, size=(len(NODE_TYPES), dims[0])))
    for l, (a, b) in enumerate(zip(dims, dims[1:])):
        ps.add(f"rgcn.W{l}", np.stack([rng.uniform(-1, 1, (a, b)) / np.sqrt(a) for _ in EDGE_TYPES]))
    ps.ones("rgcn.omega", (len(EDGE_TYPES),))


def init_uagnn(ps: ParamStore, rng: np.random.Generator, node_dims: list[int], edge_dims: list[int]) -> None:
    for l in range(len(node_dims) - 1):
        ps.uniform(f"ua.Wn{l}", (node_dims[l], node_dims[l + 1]), rng)
        ps.zeros(f"ua.bn{l}", (node_dims[l + 1],))
        fan = 2 * edge_dims[l] + 2 * node_dims[l]
        ps.uniform(f"ua.We{l}", (fan, edge_dims[l + 1]), rng)
        ps.zeros(f"ua.be{l}", (edge_dims[l + 1],))


def init_fusion(ps: ParamStore, rng: np.random.Generator, code_dim: int | None, tx_dim: int | None, fuse: int, n_classes: int = 2) -> None:
    if code_dim is not None:
        ps.uniform("fuse.Wc", (code_dim, fuse), rng)
        ps.zeros("fuse.bc", (fuse,))
    if tx_dim is not None:
        ps.uniform("fuse.Wt", (tx_dim, fuse), rng)
        ps.zeros("fuse.bt", (fuse,))
    if code_dim is not None and tx_dim is not None:
        ps.uniform("fuse.Wa", (fuse, fuse), rng)
        ps.zeros("fuse.ba", (fuse,))
        ps.uniform("fuse.s", (fuse,), rng, fan_in=fuse)
    ps.uniform("cls.W", (fuse, n_classes), rng)
    ps.zeros("cls.b", (n_classes,))


# ---------------------------------------------------------------------------
# forward passes


def block_encoder(ps: ParamStore, seqs: np.ndarray, lengths: np.ndarray, heads: int, bucket: int = 16) -> Tensor:
    """Encode padded token sequences (U, L) into (U, dim) by self-attention and mean pooling.

    Sequences are processed in groups of similar length so short blocks do not
    pay for the padding of the longest one; the result does not depend on the
    grouping because padded keys are masked out.
    """
    order = np.argsort(lengths, kind="stable")
    if len(order) <= bucket:
        return _encode(ps, seqs[:, : int(lengths.max())], lengths, heads)
    parts = []
    for lo in range(0, len(order), bucket):
        idx = order[lo : lo + bucket]
        parts.append(_encode(ps, seqs[idx, : int(lengths[idx].max())], lengths[idx], heads))
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    return concat(parts, axis=0)[inv]


def _encode(ps: ParamStore, seqs: np.ndarray, lengths: np.ndarray, heads: int) -> Tensor:
    U, L = seqs.shape
    tok = ps["enc.tok"]
    dim = tok.shape[1]
    hd = dim // heads
    valid = np.arange(L)[None, :] < lengths[:, None]  # (U, L)
    x = tok[seqs] + ps["enc.pos"][np.arange(L)]
    key_mask = valid[:, None, None, :]  # (U, 1, 1, L)
    n_layers = sum(1 for n in ps if n.startswith("enc.l") and n.endswith(".q"))
    for i in range(n_layers):
        p = f"enc.l{i}"
        h = layernorm(x, ps[f"{p}.ln1.g"], ps[f"{p}.ln1.b"])

        def split(t: Tensor) -> Tensor:
            return t.reshape(U, L, heads, hd).transpose(0, 2, 1, 3)

        q = split(h @ ps[f"{p}.q"])
        k = split(h @ ps[f"{p}.k"])
        v = split(h @ ps[f"{p}.v"])
        att = softmax(matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(hd)), axis=-1, mask=key_mask)
        ctx = matmul(att, v).transpose(0, 2, 1, 3).reshape(U, L, dim)
        x = x + ctx @ ps[f"{p}.o"]
        h = layernorm(x, ps[f"{p}.ln2.g"], ps[f"{p}.ln2.b"])
        x = x + relu(h @ ps[f"{p}.ff1"] + ps[f"{p}.ff1.b"]) @ ps[f"{p}.ff2"] + ps[f"{p}.ff2.b"]
    x = layernorm(x, ps["enc.lnf.g"], ps["enc.lnf.b"])
    w = valid / lengths[:, None]
    return (x * w[:, :, None]).sum(axis=1)


def rgcn(ps: ParamStore, h: Tensor, adj: np.ndarray) -> Tensor:
    """Relational propagation over per-relation normalised adjacency (R, n, n); returns node states."""
    omega = ps["rgcn.omega"].reshape(-1, 1, 1)
    layers = sum(1 for n in ps if n.startswith("rgcn.W"))
    a = as_tensor(adj)
    for l in range(layers):
        msg = matmul(matmul(a, h), ps[f"rgcn.W{l}"])  # (R, n, d)
        h = relu((msg * omega).sum(axis=0))
    return h


def code_embedding(ps: ParamStore, x: CodeInput, heads: int, blocks: Tensor | None = None, rows: np.ndarray | None = None) -> Tensor:
    """Pooled code-graph embedding.

    ``blocks``/``rows`` let a caller pass encodings computed for a whole batch
    at once: node i then uses ``blocks[rows[i]]``.
    """
    if blocks is None:
        blocks = block_encoder(ps, x.seqs, x.lengths, heads)
        rows = x.node_seq
    h = blocks[rows] + ps["rgcn.type_emb"][x.node_type]
    return rgcn(ps, h, x.adj).mean(axis=0)


def shared_sequences(inputs: list[CodeInput]) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Deduplicate block sequences across several graphs.

    Returns padded sequences, their lengths and, per graph, the row of each node.
    """
    index: dict[bytes, int] = {}
    seqs: list[np.ndarray] = []
    rows = []
    for x in inputs:
        local = np.empty(x.seqs.shape[0], dtype=np.int64)
        for i in range(x.seqs.shape[0]):
            s = x.seqs[i, : x.lengths[i]]
            k = s.tobytes()
            if k not in index:
                index[k] = len(seqs)
                seqs.append(s)
            local[i] = index[k]
        rows.append(local[x.node_seq])
    L = max(len(s) for s in seqs)
    out = np.zeros((len(seqs), L), dtype=np.int64)
    lengths = np.empty(len(seqs), dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
        lengths[i] = len(s)
    return out, lengths, rows


def uagnn(ps: ParamStore, x: TxInput, node_x: np.ndarray, edge_x: np.ndarray) -> Tensor:
    layers = sum(1 for n in ps if n.startswith("ua.Wn"))
    nodes = as_tensor(node_x)
    edges = as_tensor(edge_x)
    adj = as_tensor(x.adj)
    mask = as_tensor(x.mask_mean)
    for l in range(layers):
        new_nodes = relu(matmul(adj, nodes) @ ps[f"ua.Wn{l}"] + ps[f"ua.bn{l}"])
        if x.m:
            cat = concat([edges, nodes[x.src], nodes[x.dst], matmul(mask, edges)], axis=1)
            edges = relu(cat @ ps[f"ua.We{l}"] + ps[f"ua.be{l}"])
        nodes = new_nodes
    node_pool = nodes.mean(axis=0)
    if x.m:
        edge_pool = edges.mean(axis=0)
    else:
        edge_pool = Tensor(np.zeros(ps[f"ua.be{layers - 1}"].shape[0]))
    return concat([node_pool, edge_pool], axis=0)


def tx_embedding(ps: ParamStore, x: TxInput, use_nodes: bool = True, use_edges: bool = True) -> Tensor:
    # counts and amounts span orders of magnitude; compress before the first layer
    node_x = np.log1p(np.abs(x.node_x)) * np.sign(x.node_x)
    edge_x = np.log1p(np.abs(x.edge_x)) * np.sign(x.edge_x)
    if not use_nodes:
        node_x = np.zeros_like(node_x)
    if not use_edges:
        edge_x = np.zeros_like(edge_x)
    return uagnn(ps, x, node_x, edge_x)


def fuse_and_classify(
    ps: ParamStore,
    code: Tensor | None,
    tx: Tensor | None,
    rate: float,
    rng: np.random.Generator | None,
    train: bool,
) -> tuple[Tensor, Tensor]:
    """Return (logits over {benign, rugpull}, attention weights (w_c, w_t))."""
    fc = code @ ps["fuse.Wc"] + ps["fuse.bc"] if code is not None else None
    ft = tx @ ps["fuse.Wt"] + ps["fuse.bt"] if tx is not None else None
    if fc is not None and ft is not None:
        both = concat([fc.reshape(1, -1), ft.reshape(1, -1)], axis=0)  # (2, fuse)
        scores = tanh(both @ ps["fuse.Wa"] + ps["fuse.ba"]) @ ps["fuse.s"]  # (2,)
        w = softmax(scores, axis=0)
        fused = (both * w.reshape(2, 1)).sum(axis=0)
    elif fc is not None:
        w, fused = Tensor(np.array([1.0, 0.0])), fc
    else:
        w, fused = Tensor(np.array([0.0, 1.0])), ft
    fused = dropout(fused, rate, rng, train)
    return fused @ ps["cls.W"] + ps["cls.b"], w
