"""The two-branch detector: block encoder + RGCN on code, UAGNN on transfers, attention fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .inputs import EDGE_TYPES, MAX_LEN, NODE_TYPES, CodeInput, TxInput, relation_adjacency
from .layers import (
    block_encoder,
    code_embedding,
    fuse_and_classify,
    init_block_encoder,
    init_fusion,
    init_rgcn,
    init_uagnn,
    shared_sequences,
    tx_embedding,
)
from .params import ParamStore
from .tensor import Tensor, log_softmax, softmax

VARIANTS = {
    # name: (code branch, tx branch, keep risk types, node feats, edge feats)
    "full": (True, True, True, True, True),
    "srcg-only": (True, False, True, True, True),
    "srcg-no-risk": (True, False, False, True, True),
    "tfbg-only": (False, True, True, True, True),
    "tfbg-no-node-feats": (False, True, True, False, True),
    "tfbg-no-edge-feats": (False, True, True, True, False),
}

DEFAULT_HYPERPARAMS = {
    "code_dim": 36,
    "rgcn_dims": [36, 36, 36],
    "enc_layers": 2,
    "enc_heads": 4,
    "enc_ff": 72,
    "max_len": MAX_LEN,
    "tx_node_dims": [14, 32, 32],
    "tx_edge_dims": [14, 32, 32],
    "fuse_dim": 8,
    "dropout": 0.3,
    "variant": "full",
}


@dataclass
class Sample:
    code: CodeInput | None
    tx: TxInput | None
    label: int | None = None
    token: str = ""


def strip_risk(x: CodeInput) -> CodeInput:
    """Force every node and edge to the 'normal' type."""
    n = x.n
    normal_edge = EDGE_TYPES.index("normal")
    edges = np.array([(a, b, normal_edge) for a, b, _ in x.edges.tolist()], dtype=np.int64).reshape(-1, 3)
    return CodeInput(
        x.seqs,
        x.lengths,
        x.node_seq,
        np.full(n, NODE_TYPES.index("normal")),
        relation_adjacency(n, [tuple(e) for e in edges.tolist()]),
        edges,
    )


class RugModel:
    def __init__(self, params: ParamStore):
        self.params = params
        hp = params.hyperparams
        self.variant = hp.get("variant", "full")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        self.use_code, self.use_tx, self.keep_risk, self.node_feats, self.edge_feats = VARIANTS[self.variant]

    @classmethod
    def create(cls, seed: int, **overrides) -> "RugModel":
        hp = dict(DEFAULT_HYPERPARAMS)
        hp.update(overrides)
        hp["seed"] = int(seed)
        variant = hp["variant"]
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        use_code, use_tx = VARIANTS[variant][:2]
        rng = np.random.default_rng(seed)
        ps = ParamStore(hp)
        code_dim = tx_dim = None
        if use_code:
            init_block_encoder(ps, rng, hp["code_dim"], hp["enc_layers"], hp["enc_ff"], hp["max_len"])
            init_rgcn(ps, rng, hp["rgcn_dims"])
            code_dim = hp["rgcn_dims"][-1]
        if use_tx:
            init_uagnn(ps, rng, hp["tx_node_dims"], hp["tx_edge_dims"])
            tx_dim = hp["tx_node_dims"][-1] + hp["tx_edge_dims"][-1]
        init_fusion(ps, rng, code_dim, tx_dim, hp["fuse_dim"])
        return cls(ps)

    def encode_blocks(self, x: CodeInput) -> Tensor:
        return block_encoder(self.params, x.seqs, x.lengths, self.params.hyperparams["enc_heads"])

    def branches(self, s: Sample) -> tuple[Tensor | None, Tensor | None]:
        heads = self.params.hyperparams["enc_heads"]
        code = tx = None
        if self.use_code:
            if s.code is None:
                raise ValueError(f"sample {s.token!r} has no code graph")
            cx = s.code if self.keep_risk else strip_risk(s.code)
            code = code_embedding(self.params, cx, heads)
        if self.use_tx:
            if s.tx is None:
                raise ValueError(f"sample {s.token!r} has no transfer graph")
            tx = tx_embedding(self.params, s.tx, self.node_feats, self.edge_feats)
        return code, tx

    def forward(self, s: Sample, train: bool = False, rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        code, tx = self.branches(s)
        return fuse_and_classify(self.params, code, tx, self.params.hyperparams["dropout"], rng, train)

    def forward_batch(
        self, samples: list[Sample], train: bool = False, rng: np.random.Generator | None = None
    ) -> list[tuple[Tensor, Tensor]]:
        """Per-sample (logits, attention) with block sequences encoded once for the whole batch.

        Numerically identical to calling ``forward`` on each sample in turn.
        """
        hp = self.params.hyperparams
        codes: list[Tensor | None] = [None] * len(samples)
        if self.use_code:
            inputs = []
            for s in samples:
                if s.code is None:
                    raise ValueError(f"sample {s.token!r} has no code graph")
                inputs.append(s.code if self.keep_risk else strip_risk(s.code))
            seqs, lengths, rows = shared_sequences(inputs)
            blocks = block_encoder(self.params, seqs, lengths, hp["enc_heads"])
            codes = [code_embedding(self.params, x, hp["enc_heads"], blocks, r) for x, r in zip(inputs, rows)]
        out = []
        for s, code in zip(samples, codes):
            tx = None
            if self.use_tx:
                if s.tx is None:
                    raise ValueError(f"sample {s.token!r} has no transfer graph")
                tx = tx_embedding(self.params, s.tx, self.node_feats, self.edge_feats)
            out.append(fuse_and_classify(self.params, code, tx, hp["dropout"], rng, train))
        return out

    def loss(self, s: Sample, weight: float = 1.0, train: bool = True, rng: np.random.Generator | None = None) -> Tensor:
        logits, _ = self.forward(s, train, rng)
        return log_softmax(logits, axis=0)[int(s.label)] * (-weight)

    def batch_loss(
        self, samples: list[Sample], weights: list[float], train: bool = True, rng: np.random.Generator | None = None
    ) -> Tensor:
        """Weighted cross-entropy summed over the batch and divided by the total weight."""
        total = None
        for (logits, _), s, w in zip(self.forward_batch(samples, train, rng), samples, weights):
            term = log_softmax(logits, axis=0)[int(s.label)] * (-w)
            total = term if total is None else total + term
        return total * (1.0 / float(sum(weights)))

    def predict(self, s: Sample) -> tuple[float, tuple[float, float]]:
        """(probability of rug pull, (w_code, w_tx)) in inference mode."""
        return self.predict_batch([s])[0]

    def predict_batch(self, samples: list[Sample]) -> list[tuple[float, tuple[float, float]]]:
        out = []
        for logits, w in self.forward_batch(samples, train=False):
            p = softmax(logits, axis=0).data
            out.append((float(p[1]), (float(w.data[0]), float(w.data[1]))))
        return out
