"""Token bundle files: ``token.json`` + ``events.json`` in one directory."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..evm.disasm import Bytecode, BytecodeError
from .models import InputError, TokenDescriptor, TransferEvent, dedupe, norm_address


@dataclass(frozen=True)
class TokenBundle:
    token: TokenDescriptor
    events: tuple[TransferEvent, ...]
    label: str | None = None


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise InputError(f"missing file {path}", [f"{path.name}: not found"]) from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON", [f"{path.name}: {exc}"]) from None


def parse_token(doc: dict, source: str = "fixture-file") -> TokenDescriptor:
    if not isinstance(doc, dict):
        raise InputError("token.json must hold an object", ["token.json: expected object"])
    missing = [k for k in ("address", "decimals", "creator", "creation_timestamp", "bytecode") if k not in doc]
    if missing:
        raise InputError("invalid token.json", [f"token.{k}: missing" for k in missing])
    try:
        code = Bytecode.from_hex(str(doc["bytecode"]), source)  # type: ignore[arg-type]
    except BytecodeError as exc:
        raise InputError("invalid token.json", [f"token.bytecode: {exc}"]) from None
    try:
        return TokenDescriptor(
            norm_address(str(doc["address"])),
            doc["decimals"],
            norm_address(str(doc["creator"])),
            doc["creation_timestamp"],
            code,
        )
    except InputError as exc:
        raise InputError("invalid token.json", [f"token.{p}" for p in exc.problems]) from None


def load_bundle(path: str | Path) -> TokenBundle:
    """Load and validate a bundle directory. Raises InputError with field diagnostics."""
    root = Path(path)
    if not root.is_dir():
        raise InputError(f"bundle directory not found: {root}", [f"{root}: not a directory"])
    token = parse_token(_read_json(root / "token.json"))
    raw = _read_json(root / "events.json")
    if not isinstance(raw, list):
        raise InputError("events.json must hold a list", ["events.json: expected array"])
    events = []
    problems: list[str] = []
    for i, d in enumerate(raw):
        try:
            events.append(TransferEvent.from_json(d, f"events[{i}]"))
        except InputError as exc:
            problems.extend(exc.problems)
    if problems:
        raise InputError("invalid events.json", problems)
    events, _ = dedupe(events)
    early = [i for i, e in enumerate(events) if e.timestamp < token.creation_timestamp]
    if early:
        raise InputError(
            "events precede token creation",
            [f"events[{i}].timestamp: before creation_timestamp" for i in early[:10]],
        )
    label = None
    meta = root / "label.json"
    if meta.exists():
        label = _read_json(meta).get("label")
    return TokenBundle(token, tuple(events), label)


def save_bundle(bundle: TokenBundle, path: str | Path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / "token.json").write_text(json.dumps(bundle.token.to_json(), indent=1, sort_keys=True))
    (root / "events.json").write_text(json.dumps([e.to_json() for e in bundle.events], indent=1, sort_keys=True))
    if bundle.label is not None:
        (root / "label.json").write_text(json.dumps({"label": bundle.label}))
    return root
