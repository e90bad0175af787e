"""Seeded synthetic benchmark: labelled token bundles with planted code and trading signals.

Rug pull tokens carry a backdoored contract (one of the eight risk exemplars),
a wash-trading transfer trace, or both. Benign tokens pair an honest twin or
plain token with organic trading. The "mixed-signal" subset keeps benign
tokens and the rug pulls that show only one of the two signals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data.bundle import TokenBundle, save_bundle
from .data.models import ZERO_ADDRESS, TokenDescriptor, TransferEvent
from .evm.disasm import Bytecode
from .evm.templates import RISKS, SEL, TokenSpec, build_token

BASE_TIME = 1_650_000_000
DECIMALS = (6, 8, 9, 18)


@dataclass(frozen=True)
class SynthToken:
    id: str
    label: str  # "rugpull" | "benign"
    signal: str  # "both" | "code" | "tx" | "none"
    risk: str | None
    bundle: TokenBundle

    @property
    def mixed(self) -> bool:
        return self.signal in ("code", "tx", "none")


def _addr(rng: np.random.Generator) -> str:
    return "0x" + rng.bytes(20).hex()


def _hash(rng: np.random.Generator) -> str:
    return "0x" + rng.bytes(32).hex()


def _variant_spec(rng: np.random.Generator, risk: str | None, twin: bool) -> TokenSpec:
    extra = []
    for _ in range(int(rng.integers(0, 3))):
        extra.append(int(rng.integers(0x01000000, 0xFFFFFFFF)))
    return TokenSpec(
        risk=risk,
        twin=twin,
        extra_views=bool(rng.random() < 0.7),
        swap_flag_setter=bool(rng.random() < 0.4),
        role_guard=bool(rng.random() < 0.25),
        filler=int(rng.integers(0, 4)),
        order_seed=int(rng.integers(0, 1 << 30)),
        extra_selectors=[s for s in extra if s not in SEL.values()],
    )


def _code(rng: np.random.Generator, backdoor: bool) -> tuple[bytes, str | None]:
    if backdoor:
        risk = RISKS[int(rng.integers(len(RISKS)))]
        return build_token(_variant_spec(rng, risk, twin=False)), risk
    if rng.random() < 0.6:
        risk = RISKS[int(rng.integers(len(RISKS)))]
        return build_token(_variant_spec(rng, risk, twin=True)), None
    return build_token(_variant_spec(rng, None, twin=False)), None


def _units(rng: np.random.Generator, tokens: float, decimals: int) -> int:
    return max(0, int(round(tokens * 10**decimals)))


def _organic(rng, creator, pool, start, decimals, n_events) -> list[TransferEvent]:
    """Many independent holders, Poisson arrivals, heavy-tailed small amounts."""
    holders = [_addr(rng) for _ in range(int(rng.integers(25, 120)))]
    ev: list[TransferEvent] = []
    t = start
    supply = 1e9
    ev.append(TransferEvent(_hash(rng), 0, t, ZERO_ADDRESS, creator, _units(rng, supply, decimals), 120_000))
    t += int(rng.integers(60, 900))
    ev.append(TransferEvent(_hash(rng), 0, t, creator, pool, _units(rng, supply * 0.6, decimals), 180_000))
    active = holders[:3]
    while len(ev) < n_events:
        t += int(rng.exponential(2400)) + 1
        if rng.random() < 0.25 and len(active) < len(holders):
            active.append(holders[len(active)])
        buyer = active[int(rng.integers(len(active)))]
        amt = float(rng.lognormal(np.log(2000), 1.3))
        r = rng.random()
        if r < 0.55:
            a, b = pool, buyer
        elif r < 0.85:
            a, b = buyer, pool
        else:
            a, b = buyer, active[int(rng.integers(len(active)))]
        gas = int(rng.integers(45_000, 160_000))
        ev.append(TransferEvent(_hash(rng), int(rng.integers(0, 4)), t, a, b, _units(rng, amt, decimals), gas))
    return ev


def _wash(rng, creator, pool, start, decimals, n_events) -> list[TransferEvent]:
    """A few colluding wallets churning large volume in tight bursts, then a dump."""
    colluders = [creator] + [_addr(rng) for _ in range(int(rng.integers(2, 6)))]
    victims = [_addr(rng) for _ in range(int(rng.integers(6, 30)))]
    ev: list[TransferEvent] = []
    t = start
    supply = 1e12
    ev.append(TransferEvent(_hash(rng), 0, t, ZERO_ADDRESS, creator, _units(rng, supply, decimals), 150_000))
    t += int(rng.integers(10, 120))
    ev.append(TransferEvent(_hash(rng), 0, t, creator, pool, _units(rng, supply * 0.3, decimals), 250_000))
    while len(ev) < n_events - 2:
        if rng.random() < 0.75:
            # burst of self-dealing among colluders
            for _ in range(int(rng.integers(4, 12))):
                t += int(rng.integers(2, 90))
                i, j = rng.choice(len(colluders), size=2, replace=False)
                amt = float(rng.lognormal(np.log(5e7), 0.6))
                gas = int(rng.integers(250_000, 900_000))
                ev.append(TransferEvent(_hash(rng), int(rng.integers(0, 6)), t, colluders[i], colluders[j], _units(rng, amt, decimals), gas))
        else:
            t += int(rng.integers(30, 900))
            v = victims[int(rng.integers(len(victims)))]
            amt = float(rng.lognormal(np.log(3000), 1.0))
            ev.append(TransferEvent(_hash(rng), 0, t, pool, v, _units(rng, amt, decimals), int(rng.integers(60_000, 200_000))))
    ev = ev[: n_events - 2]
    t += int(rng.integers(30, 600))
    ev.append(TransferEvent(_hash(rng), 0, t, colluders[1], creator, _units(rng, supply * 0.2, decimals), 400_000))
    t += int(rng.integers(5, 60))
    ev.append(TransferEvent(_hash(rng), 1, t, creator, pool, _units(rng, supply * 0.5, decimals), 600_000))
    return ev


def _approvals(rng, events: list[TransferEvent], pool: str) -> list[TransferEvent]:
    out = []
    senders = sorted({e.sender for e in events if e.sender not in (ZERO_ADDRESS, pool)})
    for s in senders:
        if rng.random() < 0.4:
            first = min(e.timestamp for e in events if e.sender == s)
            out.append(TransferEvent(_hash(rng), 0, max(first - int(rng.integers(1, 600)), events[0].timestamp), s, pool, 2**256 - 1, 0, "approval"))
    return out


def make_token(rng: np.random.Generator, idx: int, label: str, signal: str) -> SynthToken:
    code_bad = signal in ("both", "code")
    tx_bad = signal in ("both", "tx")
    code, risk = _code(rng, code_bad)
    decimals = int(DECIMALS[int(rng.integers(len(DECIMALS)))])
    address = _addr(rng)
    creator = _addr(rng)
    pool = _addr(rng)
    created = BASE_TIME + int(rng.integers(0, 10_000_000))
    start = created + int(rng.integers(30, 3600))
    n_events = int(rng.integers(60, 201))
    events = (_wash if tx_bad else _organic)(rng, creator, pool, start, decimals, n_events)
    events = events + _approvals(rng, events, pool)
    events.sort(key=TransferEvent.sort_key)
    token = TokenDescriptor(address, decimals, creator, created, Bytecode(code))
    return SynthToken(f"tok{idx:04d}", label, signal, risk, TokenBundle(token, tuple(events), label))


def generate(seed: int = 0, n_rug: int = 100, n_benign: int = 150) -> list[SynthToken]:
    """Deterministic corpus; rug pulls split 40% both signals, 30% code only, 30% transactions only."""
    rng = np.random.default_rng(seed)
    n_both = round(n_rug * 0.4)
    n_code = round(n_rug * 0.3)
    plan = (
        [("rugpull", "both")] * n_both
        + [("rugpull", "code")] * n_code
        + [("rugpull", "tx")] * (n_rug - n_both - n_code)
        + [("benign", "none")] * n_benign
    )
    order = rng.permutation(len(plan))
    return [make_token(rng, i, *plan[j]) for i, j in enumerate(order)]


def write_corpus(tokens: list[SynthToken], out: str | Path) -> Path:
    """Write bundles plus a JSON-lines manifest {id, label, bundle_path, signal, risk}."""
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for t in tokens:
        save_bundle(t.bundle, root / t.id)
        lines.append(json.dumps({"id": t.id, "label": t.label, "bundle_path": t.id, "signal": t.signal, "risk": t.risk}, sort_keys=True))
    manifest = root / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
