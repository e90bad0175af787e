"""End-to-end per-token pipeline: bundle -> code and transfer graphs -> model sample -> report."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from .config import Config
from .data.bundle import TokenBundle
from .data.models import select_window
from .evm.lifter import SemanticCodeGraph, build_scg
from .neural.model import RugModel, Sample
from .risk.rules import RiskFinding, detect
from .srcg import SemanticRiskCodeGraph, build_srcg, code_input
from .tfbg import TokenFlowBehaviorGraph, build_tfbg, tx_input

log = logging.getLogger(__name__)

LABELS = ("benign", "rugpull")
SCHEMA_PATH = Path(__file__).parent / "schemas" / "report.schema.json"


def label_index(label: str | None) -> int | None:
    if label is None:
        return None
    if label not in LABELS:
        raise ValueError(f"unknown label {label!r}")
    return LABELS.index(label)


@dataclass
class Prepared:
    token: str
    scg: SemanticCodeGraph
    findings: list[RiskFinding]
    srcg: SemanticRiskCodeGraph
    tfbg: TokenFlowBehaviorGraph
    sample: Sample
    warnings: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def stats(self) -> dict:
        return {"blocks": len(self.srcg.nodes), "nodes": self.tfbg.n, "edges": self.tfbg.m}


def prepare(bundle: TokenBundle, cfg: Config, token_id: str | None = None) -> Prepared:
    """Run the deterministic preprocessing stages. Raises NoTransactionsError on an empty trace."""
    timings: dict[str, float] = {}
    warnings: list[str] = []
    t0 = time.perf_counter()
    window = select_window(bundle.events, cfg.window)
    scg = build_scg(bundle.token.bytecode, cfg.max_contexts, cfg.max_states)
    t1 = time.perf_counter()
    timings["lift"] = t1 - t0
    findings = detect(scg)
    t2 = time.perf_counter()
    timings["rules"] = t2 - t1
    srcg = build_srcg(scg, findings)
    cx, truncated = code_input(srcg, cfg.hyperparams()["max_len"])
    t3 = time.perf_counter()
    timings["srcg"] = t3 - t2
    tfbg = build_tfbg(window, bundle.token, cfg.short_term_window)
    tx = tx_input(tfbg)
    timings["tfbg"] = time.perf_counter() - t3

    for key in ("contexts_capped", "unresolved_jumps", "malformed_blocks"):
        if scg.diagnostics.get(key):
            warnings.append(f"lifter: {key}={scg.diagnostics[key]}")
    if truncated:
        warnings.append(f"srcg: {truncated} block sequences truncated")
    if tfbg.m <= 2:
        warnings.append(f"degenerate transfer graph: only {tfbg.m} transfer(s)")
    if not tfbg.flags.get("has_approvals", False):
        warnings.append("missing approvals: IfApprove is 0 for every edge")
    if not tfbg.flags.get("eigenvector_converged", True):
        warnings.append("eigenvector centrality did not converge; column zeroed")
    if not tfbg.flags.get("katz_converged", True):
        warnings.append("katz centrality did not converge; column zeroed")

    tid = token_id or bundle.token.address
    sample = Sample(cx, tx, label_index(bundle.label), tid)
    return Prepared(tid, scg, findings, srcg, tfbg, sample, warnings, timings)


def build_report(p: Prepared, model: RugModel, cfg: Config, timings: bool = False) -> dict:
    t0 = time.perf_counter()
    prob, (wc, wt) = model.predict(p.sample)
    report = {
        "token": p.token,
        "verdict": "rugpull" if prob >= cfg.threshold else "benign",
        "probability": prob,
        "threshold": cfg.threshold,
        "variant": model.variant,
        "attention": {"code": wc, "tx": wt},
        "findings": [f.to_json() for f in p.findings],
        "graph_stats": p.stats,
        "warnings": list(p.warnings),
    }
    if timings:
        t = dict(p.timings)
        t["inference"] = time.perf_counter() - t0
        report["timings"] = {k: round(v, 6) for k, v in t.items()}
    return report


def scan(bundle: TokenBundle, model: RugModel, cfg: Config, timings: bool = False) -> dict:
    return build_report(prepare(bundle, cfg), model, cfg, timings)


def dumps_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=1) + "\n"


def report_text(report: dict) -> str:
    lines = [
        f"token        {report['token']}",
        f"verdict      {report['verdict']} (p={report['probability']:.4f}, threshold {report['threshold']})",
        f"attention    code={report['attention']['code']:.3f} tx={report['attention']['tx']:.3f}",
        "graphs       blocks={blocks} nodes={nodes} edges={edges}".format(**report["graph_stats"]),
    ]
    if report["findings"]:
        lines.append("findings")
        for f in report["findings"]:
            lines.append(f"  {f['risk']:<5} {f['category']:<20} cb={f['cb']}")
    else:
        lines.append("findings     none")
    for w in report["warnings"]:
        lines.append(f"warning      {w}")
    for k, v in report.get("timings", {}).items():
        lines.append(f"time         {k:<10} {v:.3f}s")
    return "\n".join(lines) + "\n"


def validate_report(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, json.loads(SCHEMA_PATH.read_text()))
