"""Command line behaviour: exit codes, reports, graph dumps and sweeps."""

import json
import shutil

import pytest

from conftest import benign_bundle, blacklist_rug_bundle
from rugsense.cli import EXIT_CONFIG, EXIT_INPUT, EXIT_OK, is_erc20, main, summarize
from rugsense.data.bundle import TokenBundle, save_bundle
from rugsense.data.models import TokenDescriptor
from rugsense.evm.asm import assemble
from rugsense.evm.disasm import Bytecode
from rugsense.evm.templates import exemplar, plain_token
from rugsense.pipeline import validate_report
from rugsense.synthetic import BASE_TIME


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_scan_report_is_valid_and_deterministic(capsys, bundles, model_path, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    code, out, _ = run(capsys, "scan", bundles["rug"], "--model", model_path, "--out", a)
    assert code == EXIT_OK and "verdict" in out
    assert run(capsys, "scan", bundles["rug"], "--model", model_path, "--out", b)[0] == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    report = json.loads(a.read_text())
    validate_report(report)
    assert [f["risk"] for f in report["findings"]] == ["ADDR"]
    assert "timings" not in report


def test_scan_json_and_timings(capsys, bundles, model_path):
    code, out, _ = run(capsys, "--json", "scan", bundles["benign"], "--model", model_path, "--timings")
    report = json.loads(out)
    validate_report(report)
    assert report["findings"] == []
    assert set(report["timings"]) == {"lift", "rules", "srcg", "tfbg", "inference"}


def test_missing_model_is_a_config_error(capsys, bundles, tmp_path):
    code, _, err = run(capsys, "scan", bundles["rug"], "--model", tmp_path / "nope.json")
    assert code == EXIT_CONFIG and "checkpoint" in err
    assert run(capsys, "scan", bundles["rug"])[0] == EXIT_CONFIG


def test_corrupt_model_is_a_config_error(capsys, bundles, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"format": "something else"}')
    assert run(capsys, "scan", bundles["rug"], "--model", p)[0] == EXIT_CONFIG


def test_malformed_bundle_is_an_input_error(capsys, bundles, model_path, tmp_path):
    d = tmp_path / "bad"
    shutil.copytree(bundles["rug"], d)
    (d / "events.json").write_text('[{"tx_hash": "0x1"}]')
    code, _, err = run(capsys, "scan", d, "--model", model_path)
    assert code == EXIT_INPUT and "events[0]" in err


def test_zero_transfers_is_an_input_error(capsys, model_path, tmp_path):
    tok = TokenDescriptor("0x" + "1" * 40, 0, "0x" + "2" * 40, BASE_TIME, Bytecode(plain_token()))
    d = save_bundle(TokenBundle(tok, ()), tmp_path / "empty")
    code, _, err = run(capsys, "scan", d, "--model", model_path)
    assert code == EXIT_INPUT and "no transactions" in err


def test_bad_config_is_a_config_error(capsys, bundles, model_path, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"threshold": 7}')
    assert run(capsys, "--config", cfg, "scan", bundles["rug"], "--model", model_path)[0] == EXIT_CONFIG
    cfg.write_text('{"bogus": 1}')
    assert run(capsys, "--config", cfg, "scan", bundles["rug"], "--model", model_path)[0] == EXIT_CONFIG
    assert run(capsys, "--config", tmp_path / "missing.yaml", "rules", "check", "--bytecode", "0x00")[0] == EXIT_CONFIG


def test_rules_check(capsys, tmp_path):
    code, out, _ = run(capsys, "--json", "rules", "check", "--bytecode", exemplar("HM").hex())
    assert code == EXIT_OK and [f["risk"] for f in json.loads(out)["findings"]] == ["HM"]
    hexfile = tmp_path / "code.hex"
    hexfile.write_text("0x" + plain_token().hex() + "\n")
    code, out, _ = run(capsys, "rules", "check", "--hexfile", hexfile)
    assert code == EXIT_OK and out == "no findings\n"
    code, _, err = run(capsys, "rules", "check", "--bytecode", "0xzz")
    assert code == EXIT_INPUT and "bytecode" in err


def test_graphs_dump(capsys, bundles, tmp_path):
    code, _, _ = run(capsys, "graphs", bundles["rug"], "--out", tmp_path / "g")
    assert code == EXIT_OK
    for name in ("scg", "srcg", "tfbg", "tfbg_features", "findings"):
        json.loads((tmp_path / "g" / f"{name}.json").read_text())
    srcg = json.loads((tmp_path / "g" / "srcg.json").read_text())
    assert any(n["type"] == "critical" for n in srcg["nodes"])


def test_erc20_screen():
    assert is_erc20(plain_token())
    assert not is_erc20(assemble("PUSH1 1 STOP"))


def test_summarize_counts():
    rows = [
        {"address": "a", "status": "ok", "verdict": "rugpull"},
        {"address": "b", "status": "ok", "verdict": "benign"},
        {"address": "c", "status": "skipped", "reason": "x"},
        {"address": "d", "status": "failed", "reason": "boom"},
    ]
    s = summarize(rows)
    assert s["counts"] == {"rugpull": 1, "benign": 1, "skipped": 1, "failed": 1}
    assert s["failures"] == [{"address": "d", "reason": "boom"}]


def test_sweep_offline_isolates_failures_and_resumes(capsys, model_path, tmp_path):
    out = tmp_path / "sweep"
    rug, ben = blacklist_rug_bundle(), benign_bundle()
    not_token = TokenBundle(
        TokenDescriptor("0x" + "3" * 40, 0, "0x" + "2" * 40, BASE_TIME, Bytecode(assemble("PUSH1 1 STOP"))),
        ben.events,
    )
    for b in (rug, ben, not_token):
        save_bundle(b, out / "bundles" / b.token.address)
    uncached = "0x" + "4" * 40
    addrs = tmp_path / "addrs.txt"
    addrs.write_text("\n".join([rug.token.address, uncached, ben.token.address, not_token.token.address]) + "\n")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"cache_dir": str(tmp_path / "cache")}))
    args = ["--offline", "--config", cfg, "--json", "sweep", addrs, "--model", model_path, "--out", out]
    code, first, _ = run(capsys, *args)
    assert code == EXIT_OK
    doc = json.loads(first)
    assert doc["network_calls"] == 0
    status = {r["address"]: r["status"] for r in doc["rows"]}
    assert status[uncached] == "failed"
    assert status[not_token.token.address] == "skipped"
    assert status[rug.token.address] == status[ben.token.address] == "ok"
    assert sum(doc["counts"].values()) == 4
    assert sorted(p.name for p in (out / "results").iterdir()) == sorted(f"{a}.json" for a in status)
    # a second run reuses every stored result
    code, second, _ = run(capsys, *args)
    assert json.loads(second)["rows"] == doc["rows"]


def test_synth_then_train_and_eval(capsys, tmp_path):
    code, _, _ = run(capsys, "--seed", 3, "synth", "--out", tmp_path / "c", "--n-rug", 5, "--n-benign", 5)
    assert code == EXIT_OK
    manifest = tmp_path / "c" / "manifest.jsonl"
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("epochs: 1\nfolds: 5\n")
    ckpt = tmp_path / "m.json"
    code, _, _ = run(capsys, "--config", cfg, "train", manifest, "--out", ckpt, "--variant", "tfbg-only",
                     "--log", tmp_path / "log.json")
    assert code == EXIT_OK and ckpt.exists()
    assert json.loads((tmp_path / "log.json").read_text())["best_epoch"] == 1
    code, out, _ = run(capsys, "--config", cfg, "--json", "eval", manifest, "--model", ckpt)
    assert code == EXIT_OK
    m = json.loads(out)["pooled"]
    assert m["tp"] + m["fp"] + m["fn"] + m["tn"] == 10


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "rugsense" in capsys.readouterr().out
