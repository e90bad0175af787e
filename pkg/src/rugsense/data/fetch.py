"""Online data access: JSON-RPC for code and metadata, an Etherscan-style explorer for logs.

Every response is written to a file cache keyed by the request, so a second
run (or ``offline=True``) replays without touching the network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import httpx

from ..evm.disasm import Bytecode
from ..evm.opcodes import APPROVAL_TOPIC
from .bundle import TokenBundle
from .models import InputError, TokenDescriptor, TransferEvent, dedupe, norm_address

log = logging.getLogger(__name__)

API_KEY_ENV = "RUGSENSE_EXPLORER_KEY"
DECIMALS_CALL = "0x313ce567"
PAGE_SIZE = 1000


class FetchError(RuntimeError):
    pass


class RetryableError(FetchError):
    """Transient transport or server failure; raised after the retry budget is spent."""


class OfflineMiss(FetchError):
    pass


class NotAContract(InputError):
    def __init__(self, address: str):
        super().__init__("not a contract", [f"{address}: empty code"])


@dataclass
class Cache:
    root: Path

    def __post_init__(self) -> None:
        self.root = Path(self.root)

    def key(self, url: str, payload: dict) -> str:
        blob = json.dumps({"url": url, "payload": payload}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str):
        p = self.path(key)
        if p.exists():
            return json.loads(p.read_text())
        return None

    def put(self, key: str, value) -> None:
        p = self.path(key)
        p.parent.mkdir(parents=True, exist_ok=True)
        tmp = p.with_suffix(".tmp")
        tmp.write_text(json.dumps(value, sort_keys=True))
        tmp.replace(p)


@dataclass
class Transport:
    """HTTP with caching, bounded exponential backoff and an optional per-endpoint rate cap."""

    cache: Cache
    offline: bool = False
    client: httpx.Client | None = None
    attempts: int = 3
    backoff: float = 0.5
    min_interval: float = 0.0
    sleep: Callable[[float], None] = time.sleep
    network_calls: int = 0
    _last: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.client is None:
            self.client = httpx.Client(timeout=30.0)

    def _throttle(self, url: str) -> None:
        if self.min_interval <= 0:
            return
        host = httpx.URL(url).host
        wait = self._last.get(host, 0.0) + self.min_interval - time.monotonic()
        if wait > 0:
            self.sleep(wait)
        self._last[host] = time.monotonic()

    def request(self, method: str, url: str, payload: dict, cache_payload: dict | None = None) -> Any:
        key = self.cache.key(url, cache_payload if cache_payload is not None else payload)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        if self.offline:
            raise OfflineMiss(f"offline and no cached response for {url}")
        last_exc: Exception | None = None
        for attempt in range(self.attempts):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            self._throttle(url)
            self.network_calls += 1
            try:
                if method == "GET":
                    resp = self.client.get(url, params=payload)
                else:
                    resp = self.client.post(url, json=payload)
            except httpx.TransportError as exc:
                last_exc = exc
                log.warning("transport error on %s (attempt %d): %s", url, attempt + 1, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_exc = FetchError(f"HTTP {resp.status_code}")
                log.warning("HTTP %d on %s (attempt %d)", resp.status_code, url, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise FetchError(f"HTTP {resp.status_code} from {url}")
            try:
                body = resp.json()
            except ValueError:
                last_exc = FetchError("response is not JSON")
                continue
            self.cache.put(key, body)
            return body
        raise RetryableError(f"{url}: giving up after {self.attempts} attempts ({last_exc})")


class RpcClient:
    def __init__(self, url: str, transport: Transport):
        self.url = url
        self.t = transport

    def call(self, method: str, params: list) -> Any:
        body = self.t.request("POST", self.url, {"jsonrpc": "2.0", "id": 1, "method": method, "params": params})
        if "error" in body:
            raise FetchError(f"rpc {method}: {body['error']}")
        return body.get("result")

    def get_code(self, address: str) -> bytes:
        res = self.call("eth_getCode", [address, "latest"]) or "0x"
        return bytes.fromhex(res[2:] if res.startswith("0x") else res)

    def decimals(self, address: str) -> int:
        res = self.call("eth_call", [{"to": address, "data": DECIMALS_CALL}, "latest"])
        if not res or res == "0x":
            raise FetchError(f"{address}: decimals() returned nothing")
        return int(res, 16)

    def tx_timestamp(self, tx_hash: str) -> int:
        tx = self.call("eth_getTransactionByHash", [tx_hash])
        if not tx:
            raise FetchError(f"unknown transaction {tx_hash}")
        block = self.call("eth_getBlockByNumber", [tx["blockNumber"], False])
        return int(block["timestamp"], 16)


class ExplorerClient:
    """Etherscan-compatible ``module=...&action=...`` API."""

    def __init__(self, url: str, transport: Transport, api_key: str | None = None):
        self.url = url
        self.t = transport
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)

    def query(self, **params) -> Any:
        payload = dict(params)
        cache_payload = dict(params)  # the key never enters the cache index
        if self.api_key:
            payload["apikey"] = self.api_key
        body = self.t.request("GET", self.url, payload, cache_payload)
        status = str(body.get("status", "1"))
        result = body.get("result")
        if status != "1":
            # "No transactions found" / "No records found" are empty results, not failures
            if isinstance(result, list) or "no " in str(body.get("message", "")).lower():
                return []
            raise FetchError(f"explorer error: {body.get('message')} {result}")
        return result

    def paged(self, max_items: int | None = None, **params) -> list[dict]:
        out: list[dict] = []
        page = 1
        while True:
            rows = self.query(page=page, offset=PAGE_SIZE, **params) or []
            out.extend(rows)
            if len(rows) < PAGE_SIZE or (max_items is not None and len(out) >= max_items):
                return out
            page += 1

    def creation(self, address: str) -> dict:
        rows = self.query(module="contract", action="getcontractcreation", contractaddresses=address)
        if not rows:
            raise FetchError(f"{address}: no creation record")
        return rows[0]

    def token_transfers(self, address: str, max_items: int | None = None) -> list[dict]:
        return self.paged(max_items, module="account", action="tokentx", contractaddress=address, sort="asc")

    def approvals(self, address: str, max_items: int | None = None) -> list[dict]:
        return self.paged(
            max_items, module="logs", action="getLogs", address=address, topic0=f"0x{APPROVAL_TOPIC:064x}"
        )


def _int(x) -> int:
    if isinstance(x, int):
        return x
    s = str(x)
    return int(s, 16) if s.startswith("0x") else int(s)


def parse_transfer_rows(rows: list[dict]) -> list[TransferEvent]:
    out = []
    per_tx: dict[str, int] = {}
    for r in rows:
        h = r["hash"].lower()
        if "logIndex" in r and r["logIndex"] not in ("", None):
            li = _int(r["logIndex"])
        else:
            # fall back to the order of appearance within the transaction
            li = per_tx.get(h, 0)
        per_tx[h] = per_tx.get(h, 0) + 1
        out.append(
            TransferEvent(
                h, li, _int(r["timeStamp"]), norm_address(r["from"]), norm_address(r["to"]),
                _int(r["value"]), _int(r.get("gas", 0) or 0), "transfer",
            )
        )
    return out


def parse_approval_rows(rows: list[dict]) -> list[TransferEvent]:
    out = []
    for r in rows:
        topics = r.get("topics", [])
        if len(topics) < 3:
            continue
        owner = "0x" + topics[1][-40:]
        spender = "0x" + topics[2][-40:]
        data = r.get("data", "0x")
        value = int(data, 16) if data not in ("", "0x") else 0
        out.append(
            TransferEvent(
                r["transactionHash"].lower(), _int(r.get("logIndex", 0) or 0), _int(r["timeStamp"]),
                owner.lower(), spender.lower(), value, 0, "approval",
            )
        )
    return out


def fetch_token(
    address: str,
    rpc: RpcClient,
    explorer: ExplorerClient,
    max_transfers: int | None = None,
) -> TokenBundle:
    """Descriptor and deduplicated raw events for one token."""
    address = norm_address(address)
    code = rpc.get_code(address)
    if not code:
        raise NotAContract(address)
    decimals = rpc.decimals(address)
    created = explorer.creation(address)
    creator = norm_address(created["contractCreator"])
    ts = created.get("timestamp")
    creation_ts = _int(ts) if ts else rpc.tx_timestamp(created["txHash"])
    token = TokenDescriptor(address, decimals, creator, creation_ts, Bytecode(code, "rpc-fetch"))
    transfers = parse_transfer_rows(explorer.token_transfers(address, max_transfers))
    approvals = parse_approval_rows(explorer.approvals(address))
    events, dropped = dedupe(transfers + approvals)
    if dropped:
        log.info("%s: removed %d duplicate events from overlapping pages", address, dropped)
    events = [e for e in events if e.timestamp >= creation_ts]
    events.sort(key=TransferEvent.sort_key)
    return TokenBundle(token, tuple(events))
