"""Canonical token and event records, windowing and value normalisation."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Literal

from ..evm.disasm import Bytecode

log = logging.getLogger(__name__)

ADDRESS_RE = re.compile(r"^0x[0-9a-f]{40}$")
HASH_RE = re.compile(r"^0x[0-9a-f]{64}$")
ZERO_ADDRESS = "0x" + "0" * 40
DEFAULT_WINDOW = 500


class InputError(ValueError):
    """Malformed or unusable input data. ``problems`` lists field-level diagnostics."""

    def __init__(self, message: str, problems: list[str] | None = None):
        super().__init__(message)
        self.problems = list(problems or [])


class NoTransactionsError(InputError):
    def __init__(self) -> None:
        super().__init__("no transactions")


def norm_address(a: str) -> str:
    return a.strip().lower()


@dataclass(frozen=True)
class TokenDescriptor:
    address: str
    decimals: int
    creator: str
    creation_timestamp: int
    bytecode: Bytecode

    def __post_init__(self) -> None:
        problems = []
        if not ADDRESS_RE.match(self.address):
            problems.append(f"address: not a 20-byte hex address: {self.address!r}")
        if not ADDRESS_RE.match(self.creator):
            problems.append(f"creator: not a 20-byte hex address: {self.creator!r}")
        if not isinstance(self.decimals, int) or not 0 <= self.decimals <= 77:
            problems.append(f"decimals: must be an integer in [0, 77], got {self.decimals!r}")
        if not isinstance(self.creation_timestamp, int) or self.creation_timestamp <= 0:
            problems.append(f"creation_timestamp: must be a positive integer, got {self.creation_timestamp!r}")
        if problems:
            raise InputError("invalid token descriptor", problems)

    def to_json(self) -> dict:
        return {
            "address": self.address,
            "decimals": self.decimals,
            "creator": self.creator,
            "creation_timestamp": self.creation_timestamp,
            "bytecode": self.bytecode.hex(),
        }


@dataclass(frozen=True)
class TransferEvent:
    tx_hash: str
    log_index: int
    timestamp: int
    sender: str
    receiver: str
    value: int
    gas_limit: int
    kind: Literal["transfer", "approval"] = "transfer"

    def sort_key(self) -> tuple[int, str, int]:
        return (self.timestamp, self.tx_hash, self.log_index)

    @property
    def uid(self) -> tuple[str, int]:
        return (self.tx_hash, self.log_index)

    def to_json(self) -> dict:
        return {
            "tx_hash": self.tx_hash,
            "log_index": self.log_index,
            "timestamp": self.timestamp,
            "from": self.sender,
            "to": self.receiver,
            "value": str(self.value),
            "gas_limit": self.gas_limit,
            "kind": self.kind,
        }

    @classmethod
    def from_json(cls, d: dict, where: str = "event") -> "TransferEvent":
        problems = []

        def need(key: str):
            if key not in d:
                problems.append(f"{where}.{key}: missing")
                return None
            return d[key]

        tx = need("tx_hash")
        li = need("log_index")
        ts = need("timestamp")
        frm = need("from")
        to = need("to")
        val = need("value")
        gas = d.get("gas_limit", 0)
        kind = d.get("kind", "transfer")
        if problems:
            raise InputError("invalid event", problems)
        if not isinstance(tx, str) or not HASH_RE.match(tx.lower()):
            problems.append(f"{where}.tx_hash: not a 32-byte hex hash")
        for key, v in (("log_index", li), ("timestamp", ts), ("gas_limit", gas)):
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                problems.append(f"{where}.{key}: must be a non-negative integer")
        for key, v in (("from", frm), ("to", to)):
            if not isinstance(v, str) or not ADDRESS_RE.match(v.lower()):
                problems.append(f"{where}.{key}: not a 20-byte hex address")
        try:
            value = int(val)
            if value < 0:
                raise ValueError
        except (TypeError, ValueError):
            problems.append(f"{where}.value: must be a non-negative decimal integer string")
            value = 0
        if kind not in ("transfer", "approval"):
            problems.append(f"{where}.kind: must be 'transfer' or 'approval'")
        if problems:
            raise InputError("invalid event", problems)
        return cls(tx.lower(), li, ts, norm_address(frm), norm_address(to), value, gas, kind)


def dedupe(events: Iterable[TransferEvent]) -> tuple[list[TransferEvent], int]:
    """Drop repeated (tx_hash, log_index) records, keeping the first; returns (events, dropped)."""
    seen: set[tuple[str, int]] = set()
    out = []
    dropped = 0
    for e in events:
        if e.uid in seen:
            dropped += 1
            continue
        seen.add(e.uid)
        out.append(e)
    if dropped:
        log.info("dropped %d duplicate events", dropped)
    return out, dropped


@dataclass(frozen=True)
class EventWindow:
    events: tuple[TransferEvent, ...]

    @property
    def transfers(self) -> list[TransferEvent]:
        return [e for e in self.events if e.kind == "transfer"]

    @property
    def approvals(self) -> list[TransferEvent]:
        return [e for e in self.events if e.kind == "approval"]


def select_window(events: Iterable[TransferEvent], n: int = DEFAULT_WINDOW) -> EventWindow:
    """Earliest ``n`` transfer logs plus the approvals up to the last kept transfer."""
    if n < 1:
        raise ValueError("window size must be positive")
    ordered = sorted(events, key=TransferEvent.sort_key)
    transfers = [e for e in ordered if e.kind == "transfer"][:n]
    if not transfers:
        raise NoTransactionsError()
    last = transfers[-1].timestamp
    keep = {e.uid for e in transfers}
    kept = [e for e in ordered if e.uid in keep or (e.kind == "approval" and e.timestamp <= last)]
    return EventWindow(tuple(kept))


def normalize_value(value: int, decimals: int) -> float:
    """ln(1 + value / 10**decimals); the division is exact, rounding happens once."""
    if value < 0:
        raise ValueError("value must be non-negative")
    scaled = Fraction(value, 10**decimals)
    return math.log1p(float(scaled))
