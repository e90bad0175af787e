"""Risk code graph typing and its dense model input."""

import numpy as np
import pytest

from rugsense.evm.lifter import build_scg
from rugsense.evm.templates import RISKS, exemplar, plain_token, twin
from rugsense.neural.inputs import EDGE_TYPES, NODE_TYPES
from rugsense.risk.rules import Risk, RiskFinding, detect
from rugsense.srcg import SRCGError, build_srcg, code_input


@pytest.mark.parametrize("risk", RISKS)
def test_node_and_edge_types_follow_the_findings(risk):
    scg = build_scg(exemplar(risk))
    findings = detect(scg)
    g = build_srcg(scg, findings)
    cb = {b for f in findings for b in f.cb}
    cf = {e for f in findings for e in f.cf}
    assert [n.id for n in g.nodes] == list(scg.blocks)
    assert sorted((e.src, e.dst) for e in g.edges) == sorted(scg.edges())
    for n in g.nodes:
        want = "critical" if n.id in cb else "invocation" if n.id in scg.invocation_blocks else "normal"
        assert n.type == want
    for e in g.edges:
        key = (e.src, e.dst)
        want = "critical" if key in cf else "dependent" if key in set(scg.dd_edges) else "normal"
        assert e.type == want
    assert g.type_counts()["critical"] == len(cb)


def test_critical_outranks_invocation():
    scg = build_scg(plain_token())
    inv = min(scg.invocation_blocks)
    g = build_srcg(scg, [RiskFinding(Risk.HM, [inv], [], ["test"])])
    assert {n.id: n.type for n in g.nodes}[inv] == "critical"


def test_benign_graph_has_no_critical_parts():
    scg = build_scg(twin("HM"))
    g = build_srcg(scg, detect(scg))
    assert g.type_counts()["critical"] == 0
    assert all(e.type != "critical" for e in g.edges)


def test_unknown_block_is_rejected():
    scg = build_scg(plain_token())
    with pytest.raises(SRCGError):
        build_srcg(scg, [RiskFinding(Risk.HM, [10**6], [], [])])
    a = next(iter(scg.blocks))
    with pytest.raises(SRCGError):
        build_srcg(scg, [RiskFinding(Risk.HM, [a], [(a, a)], [])])


def test_code_input_matches_graph():
    scg = build_scg(exemplar("TR"))
    g = build_srcg(scg, detect(scg))
    x, truncated = code_input(g)
    assert truncated == 0
    assert x.node_seq.shape == (len(g.nodes),)
    for i, n in enumerate(g.nodes):
        s = x.node_seq[i]
        assert tuple(x.seqs[s, : x.lengths[s]]) == n.tokens
        assert NODE_TYPES[x.node_type[i]] == n.type
    assert len(x.edges) == len(g.edges)
    assert {EDGE_TYPES[r] for _, _, r in x.edges} == {e.type for e in g.edges}


def test_code_input_truncates_long_blocks():
    scg = build_scg(plain_token())
    g = build_srcg(scg, [])
    longest = max(len(n.tokens) for n in g.nodes)
    x, truncated = code_input(g, max_len=longest - 1)
    assert truncated >= 1 and x.seqs.shape[1] == longest - 1


def test_identical_blocks_share_an_encoding_row():
    scg = build_scg(plain_token())
    g = build_srcg(scg, [])
    x, _ = code_input(g)
    assert len(x.seqs) == len({n.tokens for n in g.nodes})
    assert np.all(x.lengths > 0)
