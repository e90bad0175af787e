"""Command line entry point: ``rugsense <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .config import Config, ConfigError, load_config
from .data.bundle import TokenBundle, load_bundle, save_bundle
from .data.fetch import Cache, ExplorerClient, FetchError, RpcClient, Transport, fetch_token
from .data.models import InputError
from .evm.disasm import Bytecode, BytecodeError
from .evm.lifter import build_scg
from .neural.model import VARIANTS, RugModel
from .neural.params import CheckpointError, ParamStore
from .pipeline import build_report, dumps_report, prepare, report_text
from .risk.rules import detect
from .tfbg import feature_manifest

log = logging.getLogger("rugsense")

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3, 4

# PUSH4 + selector for the six mandatory ERC-20 functions
ERC20_SELECTORS = {
    "totalSupply": 0x18160DDD,
    "balanceOf": 0x70A08231,
    "transfer": 0xA9059CBB,
    "transferFrom": 0x23B872DD,
    "approve": 0x095EA7B3,
    "allowance": 0xDD62ED3E,
}


def is_erc20(code: bytes) -> bool:
    return all(bytes([0x63]) + s.to_bytes(4, "big") in code for s in ERC20_SELECTORS.values())


def _emit(args, payload: dict, text: str) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True, indent=1) + "\n" if args.json else text)


def _load_model(path: str | None) -> RugModel:
    if not path:
        raise ConfigError("a model checkpoint is required (--model)")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"model checkpoint not found: {p}")
    try:
        return RugModel(ParamStore.load(p))
    except (CheckpointError, KeyError, ValueError) as exc:
        raise ConfigError(f"unusable model checkpoint {p}: {exc}") from None


def _clients(cfg: Config) -> tuple[RpcClient, ExplorerClient, Transport]:
    t = Transport(Cache(Path(cfg.cache_dir)), offline=cfg.offline, min_interval=cfg.rate_interval)
    return RpcClient(cfg.rpc_url, t), ExplorerClient(cfg.explorer_url, t), t


def _samples(manifest: str, cfg: Config):
    from .trainer import read_manifest

    entries = read_manifest(manifest)
    prepared = []
    for e in entries:
        b = load_bundle(e.bundle_path)
        prepared.append(prepare(TokenBundle(b.token, b.events, e.label), cfg, e.id))
    return entries, [p.sample for p in prepared]


# ---------------------------------------------------------------------------
# commands


def cmd_fetch(args, cfg: Config) -> int:
    rpc, explorer, t = _clients(cfg)
    bundle = fetch_token(args.address, rpc, explorer, args.max_transfers)
    out = save_bundle(bundle, args.out)
    _emit(args, {"bundle": str(out), "events": len(bundle.events), "network_calls": t.network_calls},
          f"wrote {out} ({len(bundle.events)} events, {t.network_calls} network calls)\n")
    return EXIT_OK


def cmd_scan(args, cfg: Config) -> int:
    model = _load_model(args.model)
    bundle = load_bundle(args.bundle)
    report = build_report(prepare(bundle, cfg), model, cfg, timings=args.timings)
    if args.out:
        Path(args.out).write_text(dumps_report(report))
    if args.json:
        sys.stdout.write(dumps_report(report))
    else:
        sys.stdout.write(report_text(report))
    return EXIT_OK


def cmd_graphs(args, cfg: Config) -> int:
    p = prepare(load_bundle(args.bundle), cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scg.json").write_text(p.scg.dumps())
    (out / "srcg.json").write_text(p.srcg.dumps())
    (out / "tfbg.json").write_text(p.tfbg.dumps())
    (out / "tfbg_features.json").write_text(json.dumps(feature_manifest(), indent=1))
    (out / "findings.json").write_text(json.dumps([f.to_json() for f in p.findings], indent=1, sort_keys=True))
    _emit(args, {"out": str(out), **p.stats}, f"wrote graphs to {out}: {p.stats}\n")
    return EXIT_OK


def cmd_rules(args, cfg: Config) -> int:
    if args.bundle:
        code = load_bundle(args.bundle).token.bytecode
    else:
        text = Path(args.hexfile).read_text() if args.hexfile else args.bytecode
        try:
            code = Bytecode.from_hex(text.strip())
        except BytecodeError as exc:
            raise InputError("invalid bytecode", [f"bytecode: {exc}"]) from None
    findings = detect(build_scg(code, cfg.max_contexts, cfg.max_states))
    lines = [f"{f.risk.value:<5} {f.category:<20} cb={list(f.cb)}  {'; '.join(f.witness)}\n" for f in findings]
    _emit(args, {"findings": [f.to_json() for f in findings]}, "".join(lines) or "no findings\n")
    return EXIT_OK


def cmd_train(args, cfg: Config) -> int:
    from .trainer import evaluate, split, train

    _, samples = _samples(args.manifest, cfg)
    fold = split([s.label for s in samples], cfg.seed, cfg.folds)[args.fold]
    res = train([samples[i] for i in fold.train], [samples[i] for i in fold.val], cfg, args.variant, cfg.seed)
    res.model.params.save(args.out)
    rep = evaluate(res.model, [samples[i] for i in fold.test], cfg.threshold)
    if args.log:
        Path(args.log).write_text(json.dumps(
            {"best_epoch": res.best_epoch, "aborted": res.aborted, "epochs": [e.to_json() for e in res.log],
             "test": rep.to_json()}, indent=1, sort_keys=True))
    _emit(args, {"checkpoint": args.out, "best_epoch": res.best_epoch, "aborted": res.aborted, "test": rep.to_json()},
          f"saved {args.out} (best epoch {res.best_epoch})\n" + rep.table())
    return EXIT_OK if res.aborted is None else EXIT_INTERNAL


def cmd_eval(args, cfg: Config) -> int:
    from .trainer import cross_validate, evaluate

    _, samples = _samples(args.manifest, cfg)
    if args.model:
        rep = evaluate(_load_model(args.model), samples, cfg.threshold)
    else:
        rep = cross_validate(samples, cfg, args.variant).report
    if args.out:
        Path(args.out).write_text(json.dumps(rep.to_json(), indent=1, sort_keys=True))
    _emit(args, rep.to_json(), rep.table())
    return EXIT_OK


def cmd_ablation(args, cfg: Config) -> int:
    from .trainer import ablation, subset_metrics

    entries, samples = _samples(args.manifest, cfg)
    results = ablation(samples, cfg, tuple(args.variants))
    mixed = {e.id for e in entries if e.extra.get("signal") in ("code", "tx", "none")}
    doc, text = {}, []
    for v, cv in results.items():
        doc[v] = cv.report.to_json()
        line = f"{v:<20} meanF1 {cv.report.mean('f1'):.4f}"
        if mixed:
            m = subset_metrics(samples, cv.report.predictions, mixed, cfg.threshold)
            doc[v]["mixed_subset"] = m.to_json()
            line += f"  mixedF1 {m.f1:.4f}"
        text.append(line + "\n")
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=1, sort_keys=True))
    _emit(args, doc, "".join(text))
    return EXIT_OK


def _sweep_one(address: str, rpc, explorer, model, cfg: Config, out: Path) -> dict:
    address = address.strip().lower()
    done = out / "results" / f"{address}.json"
    if done.exists():
        return json.loads(done.read_text())
    try:
        bundle_dir = out / "bundles" / address
        if (bundle_dir / "token.json").exists():
            bundle = load_bundle(bundle_dir)
        else:
            bundle = fetch_token(address, rpc, explorer, cfg.window)
            save_bundle(bundle, bundle_dir)
        if not is_erc20(bundle.token.bytecode.data):
            row = {"address": address, "status": "skipped", "reason": "not an ERC-20 token"}
        else:
            report = build_report(prepare(bundle, cfg), model, cfg)
            row = {"address": address, "status": "ok", "verdict": report["verdict"],
                   "probability": report["probability"], "findings": [f["risk"] for f in report["findings"]]}
    except (InputError, FetchError) as exc:
        row = {"address": address, "status": "failed", "reason": str(exc)}
    except Exception as exc:  # isolate per-address failures
        log.exception("sweep: %s failed", address)
        row = {"address": address, "status": "failed", "reason": f"internal: {exc}"}
    done.parent.mkdir(parents=True, exist_ok=True)
    done.write_text(json.dumps(row, sort_keys=True))
    return row


def summarize(rows: list[dict]) -> dict:
    counts = {"rugpull": 0, "benign": 0, "skipped": 0, "failed": 0}
    for r in rows:
        counts[r["verdict"] if r["status"] == "ok" else r["status"]] += 1
    return {"total": len(rows), "counts": counts,
            "failures": [{"address": r["address"], "reason": r["reason"]} for r in rows if r["status"] == "failed"]}


def cmd_sweep(args, cfg: Config) -> int:
    model = _load_model(args.model)
    addresses = [a.strip() for a in Path(args.addresses).read_text().splitlines() if a.strip()]
    rpc, explorer, t = _clients(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        rows = list(pool.map(lambda a: _sweep_one(a, rpc, explorer, model, cfg, out), addresses))
    summary = summarize(rows)
    summary["network_calls"] = t.network_calls
    (out / "summary.json").write_text(json.dumps({**summary, "rows": rows}, indent=1, sort_keys=True))
    text = [f"{r['address']}  {r.get('verdict', r['status']):<8} {r.get('reason', '')}\n" for r in rows]
    text.append(" ".join(f"{k}={v}" for k, v in summary["counts"].items()) + f" network_calls={t.network_calls}\n")
    _emit(args, {**summary, "rows": rows}, "".join(text))
    return EXIT_OK


def cmd_synth(args, cfg: Config) -> int:
    from .synthetic import generate, write_corpus

    manifest = write_corpus(generate(cfg.seed, args.n_rug, args.n_benign), args.out)
    _emit(args, {"manifest": str(manifest)}, f"wrote {manifest}\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rugsense", description="Rug pull detection from token bytecode and transfers.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--config", help="JSON or YAML config file")
    ap.add_argument("--offline", action="store_true", help="serve network requests from the cache only")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--json", action="store_true", help="machine-readable output")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download bytecode and events into a bundle")
    p.add_argument("address")
    p.add_argument("--out", required=True)
    p.add_argument("--max-transfers", type=int, default=None)
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("scan", help="classify one bundle")
    p.add_argument("bundle")
    p.add_argument("--model", required=False)
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--timings", action="store_true", help="include per-stage timings in the report")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("graphs", help="dump the code and transfer graphs as JSON")
    p.add_argument("bundle")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_graphs)

    p = sub.add_parser("rules", help="risk rule engine")
    rsub = p.add_subparsers(dest="rules_command", required=True)
    c = rsub.add_parser("check", help="list risk findings for bytecode")
    src = c.add_mutually_exclusive_group(required=True)
    src.add_argument("--bundle")
    src.add_argument("--bytecode", help="hex string")
    src.add_argument("--hexfile")
    c.set_defaults(func=cmd_rules)

    p = sub.add_parser("train", help="train on one fold of a manifest and save a checkpoint")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=sorted(VARIANTS), default="full")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--log", help="write the training log as JSON")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, or cross-validate without one")
    p.add_argument("manifest")
    p.add_argument("--model")
    p.add_argument("--variant", choices=sorted(VARIANTS), default="full")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablation", help="cross-validate each model variant")
    p.add_argument("manifest")
    p.add_argument("--variants", nargs="+", choices=list(VARIANTS), default=list(VARIANTS))
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("sweep", help="fetch, screen and scan a list of addresses")
    p.add_argument("addresses", help="file with one address per line")
    p.add_argument("--model", required=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="write the synthetic benchmark corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-rug", type=int, default=100)
    p.add_argument("--n-benign", type=int, default=150)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.offline:
            cfg.offline = True
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        for p in exc.problems:
            print(f"  {p}", file=sys.stderr)
        return EXIT_INPUT
    except FetchError as exc:
        print(f"fetch error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
