"""Token flow behaviour graph: transfer multigraph with 14 node and 14 edge features."""

from __future__ import annotations

import json
import math
from bisect import bisect_left
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .data.models import EventWindow, TokenDescriptor, TransferEvent, normalize_value
from .neural.inputs import TxInput, sym_norm

NODE_FEATURES = (
    "degree_centrality",
    "indegree_centrality",
    "outdegree_centrality",
    "betweenness_centrality",
    "closeness_centrality",
    "eigenvector_centrality",
    "katz_centrality",
    "clustering_coefficient",
    "if_token_creator",
    "fund_in_out_ratio",
    "short_term_max_in_amount",
    "short_term_max_in_count",
    "short_term_max_out_amount",
    "short_term_max_out_count",
)

EDGE_FEATURES = (
    "creation_interval",
    "latest_interval",
    "if_approve",
    "gas_limit",
    "transfer_value",
    "harmonic_transfer_value",
    "cumulative_in_amount",
    "cumulative_in_count",
    "cumulative_out_amount",
    "cumulative_out_count",
    "short_term_max_in_amount",
    "short_term_max_in_count",
    "short_term_max_out_amount",
    "short_term_max_out_count",
)

DEFAULT_W = 3600
KATZ_ALPHA = 0.005
KATZ_BETA = 1.0
KATZ_TOL = 1e-9
KATZ_MAX_ITER = 1000
EIG_TOL = 1e-13
EIG_MAX_ITER = 20000


@dataclass
class TokenFlowBehaviorGraph:
    nodes: list[str]
    src: np.ndarray  # (m,) node index
    dst: np.ndarray
    times: np.ndarray  # (m,) int
    events: list[TransferEvent]
    node_features: np.ndarray | None = None  # (n, 14)
    edge_features: np.ndarray | None = None  # (m, 14)
    flags: dict[str, bool] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def m(self) -> int:
        return len(self.events)

    def to_json(self) -> dict:
        nf = self.node_features
        ef = self.edge_features
        return {
            "nodes": [
                {"addr": a, "features": [float(x) for x in nf[i]] if nf is not None else []}
                for i, a in enumerate(self.nodes)
            ],
            "edges": [
                {
                    "src": self.nodes[int(self.src[k])],
                    "dst": self.nodes[int(self.dst[k])],
                    "t": int(self.times[k]),
                    "features": [float(x) for x in ef[k]] if ef is not None else [],
                }
                for k in range(self.m)
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def feature_manifest() -> dict:
    return {"node_features": list(NODE_FEATURES), "edge_features": list(EDGE_FEATURES)}


# ---------------------------------------------------------------------------
# skeleton


def build_graph(window: EventWindow) -> TokenFlowBehaviorGraph:
    transfers = window.transfers
    if not transfers:
        raise ValueError("window has no transfer events")
    index: dict[str, int] = {}
    src, dst = [], []
    for e in transfers:
        for a in (e.sender, e.receiver):
            if a not in index:
                index[a] = len(index)
        src.append(index[e.sender])
        dst.append(index[e.receiver])
    return TokenFlowBehaviorGraph(
        list(index),
        np.array(src, dtype=np.int64),
        np.array(dst, dtype=np.int64),
        np.array([e.timestamp for e in transfers], dtype=np.int64),
        list(transfers),
    )


def simple_digraph(n: int, edges) -> nx.DiGraph:
    """Collapse parallel edges; self-loops are kept."""
    g = nx.DiGraph()
    g.add_nodes_from(range(n))
    g.add_edges_from((int(a), int(b)) for a, b in edges)
    return g


def undirected_projection(g: nx.DiGraph) -> nx.Graph:
    u = nx.Graph()
    u.add_nodes_from(g.nodes)
    u.add_edges_from((a, b) for a, b in g.edges if a != b)
    return u


# ---------------------------------------------------------------------------
# structural features


def degree_features(g: nx.DiGraph) -> np.ndarray:
    """(n, 3): degree, indegree and outdegree centrality, each divided by n - 1."""
    n = g.number_of_nodes()
    out = np.zeros((n, 3))
    if n <= 1:
        return out
    s = 1.0 / (n - 1)
    for v in range(n):
        i, o = g.in_degree(v), g.out_degree(v)
        out[v] = ((i + o) * s, i * s, o * s)
    return out


def eigenvector_centrality(u: nx.Graph) -> tuple[np.ndarray, bool]:
    """Power iteration on (A + I) of the undirected projection from a uniform start.

    Returns (L2-normalised scores, converged). On non-convergence the scores are zeros.
    """
    n = u.number_of_nodes()
    if n == 0:
        return np.zeros(0), True
    a = nx.to_numpy_array(u, nodelist=range(n)) + np.eye(n)
    x = np.full(n, 1.0 / math.sqrt(n))
    for _ in range(EIG_MAX_ITER):
        y = a @ x
        y /= np.linalg.norm(y)
        if np.max(np.abs(y - x)) < EIG_TOL:
            return y, True
        x = y
    return np.zeros(n), False


def katz_centrality(g: nx.DiGraph, alpha: float = KATZ_ALPHA, beta: float = KATZ_BETA) -> tuple[np.ndarray, bool]:
    """x = alpha * A^T x + beta by fixed-point iteration, L2-normalised."""
    n = g.number_of_nodes()
    if n == 0:
        return np.zeros(0), True
    at = nx.to_numpy_array(g, nodelist=range(n)).T
    x = np.zeros(n)
    for _ in range(KATZ_MAX_ITER):
        y = alpha * (at @ x) + beta
        if np.max(np.abs(y - x)) < KATZ_TOL:
            return y / np.linalg.norm(y), True
        x = y
    return np.zeros(n), False


def structural_features(n: int, edges) -> tuple[np.ndarray, dict[str, bool]]:
    """(n, 8) structural block in NODE_FEATURES order, plus convergence flags."""
    g = simple_digraph(n, edges)
    u = undirected_projection(g)
    out = np.zeros((n, 8))
    out[:, 0:3] = degree_features(g)
    if n > 1:
        bc = nx.betweenness_centrality(g, normalized=True)
        cc = nx.closeness_centrality(g)
        out[:, 3] = [bc[v] for v in range(n)]
        out[:, 4] = [cc[v] for v in range(n)]
    eig, eig_ok = eigenvector_centrality(u)
    katz, katz_ok = katz_centrality(g)
    out[:, 5] = eig
    out[:, 6] = katz
    cl = nx.clustering(u)
    out[:, 7] = [cl[v] for v in range(n)]
    return out, {"eigenvector_converged": eig_ok, "katz_converged": katz_ok}


# ---------------------------------------------------------------------------
# short-term windows


def short_term_max(times, amounts, w: float, before: float | None = None) -> tuple[float, int]:
    """Maximum amount and count over windows [t_i, t_i + w] anchored at event times.

    Only events strictly before ``before`` participate when it is given.
    ``times`` must be sorted ascending.
    """
    times = list(times)
    p = len(times) if before is None else bisect_left(times, before)
    if p == 0:
        return 0.0, 0
    prefix = np.concatenate([[0.0], np.cumsum(np.asarray(amounts[:p], dtype=np.float64))])
    t = np.asarray(times[:p])
    right = np.searchsorted(t, t + w, side="right")
    idx = np.arange(p)
    return float(np.max(prefix[right] - prefix[idx])), int(np.max(right - idx))


class _Timeline:
    """Sorted per-node event times with prefix sums of amounts."""

    def __init__(self) -> None:
        self.times: list[int] = []
        self.amounts: list[float] = []
        self._prefix: np.ndarray | None = None

    def add(self, t: int, a: float) -> None:
        self.times.append(t)
        self.amounts.append(a)

    def finish(self) -> None:
        order = sorted(range(len(self.times)), key=lambda i: self.times[i])
        self.times = [self.times[i] for i in order]
        self.amounts = [self.amounts[i] for i in order]
        self._prefix = np.concatenate([[0.0], np.cumsum(self.amounts)]) if self.times else np.zeros(1)
        self._t = np.asarray(self.times, dtype=np.float64)

    def cumulative_before(self, t: int) -> tuple[float, int]:
        p = bisect_left(self.times, t)
        return float(self._prefix[p]), p

    def total(self) -> float:
        return float(self._prefix[-1])


# ---------------------------------------------------------------------------
# full feature computation


def compute_features(
    g: TokenFlowBehaviorGraph,
    token: TokenDescriptor,
    window: EventWindow,
    w: float = DEFAULT_W,
) -> TokenFlowBehaviorGraph:
    n, m = g.n, g.m
    amounts = [normalize_value(e.value, token.decimals) for e in g.events]
    inc = [_Timeline() for _ in range(n)]
    out = [_Timeline() for _ in range(n)]
    for k in range(m):
        t = int(g.times[k])
        out[int(g.src[k])].add(t, amounts[k])
        inc[int(g.dst[k])].add(t, amounts[k])
    for tl in inc + out:
        tl.finish()

    struct, flags = structural_features(n, zip(g.src.tolist(), g.dst.tolist()))
    node = np.zeros((n, len(NODE_FEATURES)))
    node[:, :8] = struct
    creator = token.creator
    for i, addr in enumerate(g.nodes):
        s_in, s_out = inc[i].total(), out[i].total()
        node[i, 8] = 1.0 if addr == creator else 0.0
        node[i, 9] = 0.5 if s_in + s_out == 0 else s_in / (s_in + s_out)
        node[i, 10], node[i, 11] = short_term_max(inc[i].times, inc[i].amounts, w)
        node[i, 12], node[i, 13] = short_term_max(out[i].times, out[i].amounts, w)

    approvals: dict[str, list[int]] = {}
    for e in window.approvals:
        approvals.setdefault(e.sender, []).append(e.timestamp)
    for v in approvals.values():
        v.sort()

    deg = struct[:, 0]
    edge = np.zeros((m, len(EDGE_FEATURES)))
    for k, e in enumerate(g.events):
        u, v = int(g.src[k]), int(g.dst[k])
        t = int(g.times[k])
        prev = int(g.times[k - 1]) if k else t
        edge[k, 0] = math.log1p(max(t - token.creation_timestamp, 0))
        edge[k, 1] = math.log1p(max(t - prev, 0))
        ap = approvals.get(e.sender)
        edge[k, 2] = 1.0 if ap and bisect_left(ap, t) > 0 else 0.0
        edge[k, 3] = math.log10(1 + e.gas_limit)
        edge[k, 4] = amounts[k]
        cu, cv = deg[u], deg[v]
        edge[k, 5] = 0.0 if cu + cv == 0 else amounts[k] * 2 * cu * cv / (cu + cv)
        edge[k, 6], edge[k, 7] = inc[v].cumulative_before(t)
        edge[k, 8], edge[k, 9] = out[u].cumulative_before(t)
        edge[k, 10], edge[k, 11] = short_term_max(inc[v].times, inc[v].amounts, w, before=t)
        edge[k, 12], edge[k, 13] = short_term_max(out[u].times, out[u].amounts, w, before=t)

    g.node_features = node
    g.edge_features = edge
    g.flags = dict(flags)
    g.flags["has_approvals"] = bool(window.approvals)
    if not (np.all(np.isfinite(node)) and np.all(np.isfinite(edge))):
        raise FloatingPointError("non-finite transfer graph features")
    return g


def build_tfbg(window: EventWindow, token: TokenDescriptor, w: float = DEFAULT_W) -> TokenFlowBehaviorGraph:
    return compute_features(build_graph(window), token, window, w)


# ---------------------------------------------------------------------------
# temporal mask and model input


def temporal_mask(k: int, src, dst, times) -> list[int]:
    """Indices of edges e' = (u, v', t') with v' != v, or (u', v, t') with u' != u, and t' < t."""
    src, dst, times = np.asarray(src), np.asarray(dst), np.asarray(times)
    u, v, t = src[k], dst[k], times[k]
    sel = (((src == u) & (dst != v)) | ((dst == v) & (src != u))) & (times < t)
    return [int(i) for i in np.nonzero(sel)[0]]


def mask_matrix(src, dst, times) -> np.ndarray:
    """(m, m) boolean matrix; row k is the temporal mask of edge k."""
    src, dst, times = np.asarray(src), np.asarray(dst), np.asarray(times)
    same_u = src[:, None] == src[None, :]
    same_v = dst[:, None] == dst[None, :]
    earlier = times[None, :] < times[:, None]
    return ((same_u & ~same_v) | (same_v & ~same_u)) & earlier


def tx_input(g: TokenFlowBehaviorGraph) -> TxInput:
    if g.node_features is None or g.edge_features is None:
        raise ValueError("features not computed")
    n = g.n
    adj = np.zeros((n, n))
    for a, b in zip(g.src.tolist(), g.dst.tolist()):
        if a != b:
            adj[a, b] = adj[b, a] = 1.0
    mask = mask_matrix(g.src, g.dst, g.times).astype(np.float64)
    counts = mask.sum(axis=1, keepdims=True)
    mean = np.divide(mask, counts, out=np.zeros_like(mask), where=counts > 0)
    return TxInput(g.node_features, g.edge_features, g.src.copy(), g.dst.copy(), sym_norm(adj), mean)
