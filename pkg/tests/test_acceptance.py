"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

import test_neural as T
from conftest import ACCEPTANCE
from oracles import digraph_classes, fd_check, mask_reference, rgcn_reference, structural_reference, uagnn_reference
from rugsense.cli import main
from rugsense.config import Config
from rugsense.data.models import normalize_value
from rugsense.evm.lifter import build_scg
from rugsense.evm.templates import RISKS, exemplar, twin
from rugsense.neural.inputs import relation_adjacency
from rugsense.neural.layers import block_encoder, fuse_and_classify, init_block_encoder, rgcn, uagnn
from rugsense.neural.model import Sample
from rugsense.neural.params import ParamStore
from rugsense.neural.tensor import Tensor, log_softmax
from rugsense.pipeline import prepare
from rugsense.risk.rules import detect
from rugsense.synthetic import generate
from rugsense.tfbg import structural_features, temporal_mask
from rugsense.trainer import cross_validate, subset_metrics


def record(n: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    ACCEPTANCE[n] = line
    print(line)


def test_criterion_1_rule_matrix():
    t0 = time.perf_counter()
    wrong = []
    for r in RISKS:
        got = [f.risk.value for f in detect(build_scg(exemplar(r)))]
        if got != [r]:
            wrong.append(f"exemplar {r} -> {got}")
        got = [f.risk.value for f in detect(build_scg(twin(r)))]
        if got:
            wrong.append(f"twin {r} -> {got}")
    dt = time.perf_counter() - t0
    ok = not wrong and dt < 10.0
    record(1, ok, f"8 exemplars exact, 8 twins clean, {dt:.2f}s (< 10s) {wrong or ''}")
    assert ok, wrong


def test_criterion_2_mask_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 8))
        m = int(rng.integers(0, 21))
        src = rng.integers(0, n, size=m).tolist()
        dst = rng.integers(0, n, size=m).tolist()
        times = rng.integers(0, 8, size=m).tolist()
        for k in range(m):
            if set(temporal_mask(k, src, dst, times)) != mask_reference(src, dst, times, k):
                mismatches += 1
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and dt < 5.0
    record(2, ok, f"1000 random multigraphs, {mismatches} mismatches, {dt:.2f}s (< 5s)")
    assert ok


def _rel_err(got, want):
    return float(np.max(np.abs(got - want) / np.maximum(np.abs(want), 1e-12)))


def test_criterion_3_reference_equivalence():
    rng = np.random.default_rng(3)
    worst_r = worst_u = 0.0
    for _ in range(100):
        n, d = int(rng.integers(1, 11)), 5
        edges = [(int(rng.integers(n)), int(rng.integers(n)), int(rng.integers(3))) for _ in range(int(rng.integers(0, 3 * n)))]
        h = rng.normal(size=(n, d))
        ps = T._rgcn_params(rng, d)
        got = rgcn(ps, Tensor(h), relation_adjacency(n, edges)).mean(axis=0).data
        ws = [[ps[f"rgcn.W{l}"].data[r] for r in range(3)] for l in range(2)]
        want = rgcn_reference(h, edges, 3, ws, ps["rgcn.omega"].data)
        worst_r = max(worst_r, _rel_err(got, want))
    for _ in range(100):
        tx, times = T.random_tx(rng, n=int(rng.integers(1, 11)))
        ps = T._ua_params(rng)
        got = uagnn(ps, tx, tx.node_x, tx.edge_x).data
        layers = [{"Wn": ps[f"ua.Wn{l}"].data, "bn": ps[f"ua.bn{l}"].data, "We": ps[f"ua.We{l}"].data,
                   "be": ps[f"ua.be{l}"].data} for l in range(2)]
        want = uagnn_reference(tx.node_x, tx.edge_x, list(tx.src), list(tx.dst), list(times), layers)
        worst_u = max(worst_u, _rel_err(got, want))
    ok = worst_r < 1e-6 and worst_u < 1e-6
    record(3, ok, f"100 graphs each, max relative error RGCN {worst_r:.1e}, UAGNN {worst_u:.1e} (< 1e-6)")
    assert ok


def test_criterion_4_gradients():
    rng = np.random.default_rng(44)
    errs = {}

    ps = ParamStore()
    init_block_encoder(ps, rng, 8, 2, 8, 16)
    x = T.random_code_input(rng, n=4, max_len=10)
    probe = rng.normal(size=8)
    errs["block encoder"] = fd_check(lambda: (block_encoder(ps, x.seqs, x.lengths, 2) @ Tensor(probe)).sum(),
                                     dict(ps.items()), rng, coords=4)

    ps = T._rgcn_params(rng, 5)
    ps.add("h", rng.normal(size=(6, 5)))
    adj = relation_adjacency(6, [(0, 1, 0), (1, 2, 1), (2, 3, 2), (3, 4, 1), (4, 5, 2), (5, 0, 0), (1, 4, 2)])
    probe5 = rng.normal(size=5)
    errs["rgcn"] = fd_check(lambda: (rgcn(ps, ps["h"], adj).mean(axis=0) @ Tensor(probe5)).sum(),
                            dict(ps.items()), rng, coords=8)

    tx, _ = T.random_tx(rng, n=5, m=8)
    pu = T._ua_params(rng)
    probe10 = rng.normal(size=10)
    errs["uagnn"] = fd_check(lambda: (uagnn(pu, tx, tx.node_x, tx.edge_x) @ Tensor(probe10)).sum(),
                             dict(pu.items()), rng, coords=8)

    pf = T._fusion(rng)
    pf.add("c", rng.normal(size=5))
    pf.add("t", rng.normal(size=5))
    errs["fusion"] = fd_check(lambda: log_softmax(fuse_and_classify(pf, pf["c"], pf["t"], 0.3, None, False)[0], axis=0)[1],
                              dict(pf.items()), rng, coords=8)

    model = T.tiny_model(4)
    samples = [Sample(T.random_code_input(rng, n=5), T.random_tx(rng, n=4, m=6)[0], y, f"t{y}") for y in (0, 1)]
    errs["full model"] = fd_check(lambda: model.batch_loss(samples, [1.0, 2.0], train=False),
                                  dict(model.params.items()), rng, coords=3)

    worst = {k: max(v.values()) for k, v in errs.items()}
    ok = all(w < 1e-4 for w in worst.values())
    record(4, ok, "central differences h=1e-3 float64, max relative error "
           + ", ".join(f"{k} {w:.1e}" for k, w in worst.items()) + " (< 1e-4)")
    assert ok, worst


def test_criterion_5_centrality_oracle():
    rng = np.random.default_rng(5)
    worst = 0.0
    checked = 0

    def check(n, edges):
        nonlocal worst, checked
        got, _ = structural_features(n, edges)
        worst = max(worst, float(np.max(np.abs(got - structural_reference(n, edges)))))
        checked += 1

    # n <= 3: every labelled digraph, self-loops included
    for n in (1, 2, 3):
        pairs = [(a, b) for a in range(n) for b in range(n)]
        for mask in range(1 << len(pairs)):
            check(n, [p for i, p in enumerate(pairs) if mask >> i & 1])
    # n = 4: every labelled loopless digraph
    pairs4 = [(a, b) for a in range(4) for b in range(4) if a != b]
    for mask in range(1 << len(pairs4)):
        check(4, [p for i, p in enumerate(pairs4) if mask >> i & 1])
    # n = 5: one representative per isomorphism class, with and without a random loop set;
    # the features are permutation-equivariant, which is checked on random relabellings below
    classes5 = digraph_classes(5)
    assert len(classes5) == 9608
    for edges in classes5:
        check(5, edges)
        loops = [(v, v) for v in range(5) if rng.random() < 0.3]
        if loops:
            check(5, edges + loops)
    for edges in classes5[::97]:
        perm = rng.permutation(5)
        base, _ = structural_features(5, edges)
        moved, _ = structural_features(5, [(int(perm[a]), int(perm[b])) for a, b in edges])
        worst = max(worst, float(np.max(np.abs(moved[perm] - base))))
    # random 6-8 node multigraphs
    for _ in range(500):
        n = int(rng.integers(6, 9))
        m = int(rng.integers(0, 3 * n))
        check(n, [(int(rng.integers(n)), int(rng.integers(n))) for _ in range(m)])
    ok = worst <= 1e-9
    record(5, ok, f"{checked} graphs (exhaustive n<=4, all 9608 classes n=5, 500 random n=6..8), "
           f"max abs error {worst:.1e} (<= 1e-9)")
    assert ok


@pytest.mark.slow
def test_criterion_6_synthetic_benchmark():
    t0 = time.perf_counter()
    cfg = Config()
    tokens = generate(seed=0, n_rug=100, n_benign=150)
    samples = [prepare(t.bundle, cfg, t.id).sample for t in tokens]
    mixed = {t.id for t in tokens if t.signal in ("code", "tx", "none")}
    single = {t.id for t in tokens if t.signal in ("code", "tx")}
    scores = {}
    for variant in ("full", "srcg-only", "tfbg-only"):
        cv = cross_validate(samples, cfg, variant)
        scores[variant] = (
            cv.report.mean("f1"),
            subset_metrics(samples, cv.report.predictions, mixed, cfg.threshold).f1,
            subset_metrics(samples, cv.report.predictions, single, cfg.threshold).f1,
        )
    dt = time.perf_counter() - t0
    full = scores["full"]
    ok = (
        full[0] >= 0.90
        and all(full[1] >= scores[v][1] and full[2] >= scores[v][2] for v in ("srcg-only", "tfbg-only"))
        and dt < 900
    )
    record(6, ok, f"5-fold mean F1 full {full[0]:.4f} (>= 0.90); mixed-subset F1 "
           + ", ".join(f"{v} {s[1]:.4f}/{s[2]:.4f}" for v, s in scores.items())
           + f" (with benign / single-signal rug pulls only); {dt:.0f}s (< 900s)")
    assert ok, scores


def test_criterion_7_latency(bundles, model_path, capsys):
    times = {}
    for name, path in bundles.items():
        t0 = time.perf_counter()
        code = main(["scan", str(path), "--model", str(model_path)])
        times[name] = time.perf_counter() - t0
        assert code == 0
    capsys.readouterr()
    ok = max(times.values()) <= 60.0
    record(7, ok, "single-token scan " + ", ".join(f"{k} {v:.2f}s" for k, v in times.items()) + " (<= 60s)")
    assert ok


def test_criterion_8_determinism(bundles, model_path, tmp_path, capsys):
    assert main(["--seed", "8", "synth", "--out", str(tmp_path / "c"), "--n-rug", "6", "--n-benign", "6"]) == 0
    manifest = str(tmp_path / "c" / "manifest.jsonl")
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"epochs": 3, "patience": 3}')
    ckpts = []
    for i in range(2):
        out = tmp_path / f"m{i}.json"
        assert main(["--config", str(cfg), "train", manifest, "--out", str(out)]) == 0
        ckpts.append(out.read_bytes())
    reports = []
    for i in range(2):
        out = tmp_path / f"r{i}.json"
        assert main(["scan", str(bundles["rug"]), "--model", str(model_path), "--out", str(out)]) == 0
        reports.append(out.read_bytes())
    capsys.readouterr()
    ok = ckpts[0] == ckpts[1] and reports[0] == reports[1]
    record(8, ok, f"train x2 checkpoints identical={ckpts[0] == ckpts[1]} ({len(ckpts[0])} bytes), "
           f"scan x2 reports identical={reports[0] == reports[1]}")
    assert ok


def test_criterion_9_normalization():
    got = {d: normalize_value(10**d, d) for d in (0, 6, 8, 18)}
    ok = all(v == math.log(2) for v in got.values())
    record(9, ok, "normalize_value(10^d, d) == ln 2 exactly for d in {0, 6, 8, 18}")
    assert ok
