"""Semantic risk code graph: the lifted graph with node and edge types from risk findings."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .evm.lifter import SemanticCodeGraph
from .evm.opcodes import OPCODES
from .neural.inputs import EDGE_TYPES, EMPTY, MAX_LEN, NODE_TYPES, UNK, CodeInput, relation_adjacency
from .risk.rules import RiskFinding


class SRCGError(RuntimeError):
    pass


@dataclass(frozen=True)
class SRCGNode:
    id: int
    type: str
    opcodes: tuple[str, ...]
    tokens: tuple[int, ...]


@dataclass(frozen=True)
class SRCGEdge:
    src: int
    dst: int
    type: str


@dataclass
class SemanticRiskCodeGraph:
    nodes: list[SRCGNode]
    edges: list[SRCGEdge]

    def type_counts(self) -> dict[str, int]:
        out = {t: 0 for t in NODE_TYPES}
        for n in self.nodes:
            out[n.type] += 1
        return out

    def to_json(self) -> dict:
        return {
            "nodes": [{"id": n.id, "type": n.type, "opcodes": list(n.opcodes)} for n in self.nodes],
            "edges": [{"src": e.src, "dst": e.dst, "type": e.type} for e in self.edges],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def block_tokens(block) -> tuple[int, ...]:
    toks = []
    for ins in block.instructions:
        toks.append(ins.byte if ins.known and ins.byte in OPCODES else UNK)
    return tuple(toks)


def build_srcg(scg: SemanticCodeGraph, findings: list[RiskFinding]) -> SemanticRiskCodeGraph:
    cb: set[int] = set()
    cf: set[tuple[int, int]] = set()
    for f in findings:
        cb.update(f.cb)
        cf.update(f.cf)
    missing = sorted(b for b in cb if b not in scg.blocks)
    missing += sorted(x for e in cf for x in e if x not in scg.blocks)
    if missing:
        raise SRCGError(f"finding references blocks not in the code graph: {missing}")
    dd = set(scg.dd_edges)
    all_edges = scg.edges()
    bad = sorted(e for e in cf if e not in set(all_edges))
    if bad:
        raise SRCGError(f"critical flow edges not in the code graph: {bad}")

    nodes = []
    for bid, block in scg.blocks.items():
        if bid in cb:
            t = "critical"
        elif bid in scg.invocation_blocks:
            t = "invocation"
        else:
            t = "normal"
        nodes.append(SRCGNode(bid, t, tuple(block.opcodes), block_tokens(block)))
    edges = []
    for e in all_edges:
        if e in cf:
            t = "critical"
        elif e in dd:
            t = "dependent"
        else:
            t = "normal"
        edges.append(SRCGEdge(e[0], e[1], t))
    return SemanticRiskCodeGraph(nodes, edges)


def code_input(g: SemanticRiskCodeGraph, max_len: int = MAX_LEN) -> tuple[CodeInput, int]:
    """Dense model input; returns it with the number of truncated sequences."""
    index = {n.id: i for i, n in enumerate(g.nodes)}
    uniq: dict[tuple[int, ...], int] = {}
    node_seq = []
    truncated = 0
    for n in g.nodes:
        toks = n.tokens or (EMPTY,)
        if len(toks) > max_len:
            truncated += 1
            toks = toks[:max_len]
        node_seq.append(uniq.setdefault(toks, len(uniq)))
    L = max(len(t) for t in uniq)
    seqs = np.zeros((len(uniq), L), dtype=np.int64)
    lengths = np.zeros(len(uniq), dtype=np.int64)
    for toks, i in uniq.items():
        seqs[i, : len(toks)] = toks
        lengths[i] = len(toks)
    edges = np.array(
        [(index[e.src], index[e.dst], EDGE_TYPES.index(e.type)) for e in g.edges], dtype=np.int64
    ).reshape(-1, 3)
    return (
        CodeInput(
            seqs,
            lengths,
            np.array(node_seq, dtype=np.int64),
            np.array([NODE_TYPES.index(n.type) for n in g.nodes], dtype=np.int64),
            relation_adjacency(len(g.nodes), [tuple(e) for e in edges.tolist()]),
            edges,
        ),
        truncated,
    )


def encode_blocks(g: SemanticRiskCodeGraph, params) -> np.ndarray:
    """Per-node 36-dim embeddings (row order = g.nodes) under frozen encoder params."""
    from .neural.layers import block_encoder

    x, _ = code_input(g, params.hyperparams.get("max_len", MAX_LEN))
    emb = block_encoder(params, x.seqs, x.lengths, params.hyperparams.get("enc_heads", 4)).data
    return emb[x.node_seq]
