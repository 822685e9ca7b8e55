"""A single-validator, append-only, hash-chained ledger that executes contract calls.

Transactions are signed with keyed digests (HMAC-SHA256) over a length-prefixed
canonical encoding. Each accepted or contract-rejected transaction is executed
atomically: a contract abort restores every contract state touched by the call
tree, and only the abort events survive in the receipt.
"""

from __future__ import annotations

import copy
import hashlib
import hmac
import inspect
import json
from dataclasses import dataclass, field
from typing import Any, ClassVar, Iterable, Sequence, TextIO

ACCEPTED = "accepted"
REJECTED = "rejected"
DEPLOY = "deploy"

CONTRACT_TYPES: dict[str, type["Contract"]] = {}


def register_contract(cls):
    CONTRACT_TYPES[cls.kind] = cls
    return cls


# ---------------------------------------------------------------------------
# canonical encoding and digests


def encode_fields(*fields: Any) -> bytes:
    """Length-prefixed, type-tagged concatenation of ``fields`` in order."""
    out = bytearray()
    for f in fields:
        if f is None:
            tag, data = b"n", b""
        elif isinstance(f, bool):
            tag, data = b"b", b"\x01" if f else b"\x00"
        elif isinstance(f, int):
            tag, data = b"i", str(f).encode()
        elif isinstance(f, str):
            tag, data = b"s", f.encode()
        elif isinstance(f, (bytes, bytearray)):
            tag, data = b"y", bytes(f)
        elif isinstance(f, (list, tuple)):
            tag, data = b"l", encode_fields(*f)
        else:
            raise TypeError(f"cannot encode {type(f).__name__}")
        out += tag + len(data).to_bytes(4, "big") + data
    return bytes(out)


def digest(*fields: Any) -> bytes:
    return hashlib.sha256(encode_fields(*fields)).digest()


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def contract_address(deployer: str, nonce: int) -> str:
    return "0x" + digest("address", deployer, nonce).hex()[:40]


# ---------------------------------------------------------------------------
# identities, transactions, receipts, blocks


def _memo(obj, name: str, compute):
    """Cache a derived value on a frozen instance (a modified copy starts with an empty cache)."""
    value = obj.__dict__.get(name)
    if value is None:
        value = compute()
        object.__setattr__(obj, name, value)
    return value


@dataclass(frozen=True)
class Identity:
    id: str
    key: bytes = field(repr=False)

    @classmethod
    def create(cls, name: str, secret: str = "") -> "Identity":
        return cls(name, digest("identity-key", secret, name))

    def sign(self, target: str, op: str, args: dict | None, nonce: int) -> "Transaction":
        payload = canonical_json(args or {}).encode()
        sig = hmac.new(self.key, signing_bytes(self.id, target, op, payload, nonce), "sha256").digest()
        return Transaction(self.id, target, op, payload, nonce, sig)


def signing_bytes(sender: str, target: str, op: str, payload: bytes, nonce: int) -> bytes:
    return encode_fields(sender, target, op, payload, nonce)


@dataclass(frozen=True)
class Transaction:
    sender: str
    target: str
    op: str
    payload: bytes
    nonce: int
    signature: bytes

    @property
    def args(self) -> dict:
        return json.loads(self.payload)

    def encoded(self) -> bytes:
        return _memo(self, "_encoded", lambda: encode_fields(
            self.sender, self.target, self.op, self.payload, self.nonce, self.signature
        ))

    @property
    def digest(self) -> bytes:
        return _memo(self, "_digest", lambda: hashlib.sha256(b"tx" + self.encoded()).digest())


@dataclass(frozen=True)
class Event:
    seq: int
    index: int
    contract: str
    name: str
    args: dict


@dataclass(frozen=True)
class Receipt:
    seq: int
    tx_digest: bytes
    status: str
    reason: str | None
    events: tuple[Event, ...]
    result: Any = None
    block: int | None = None
    sender: str = ""
    target: str = ""
    op: str = ""

    @property
    def accepted(self) -> bool:
        return self.status == ACCEPTED

    def encoded(self) -> bytes:
        def build():
            events = [(e.contract, e.name, canonical_json(e.args)) for e in self.events]
            return encode_fields(
                self.seq, self.tx_digest, self.status, self.reason, events, canonical_json(self.result)
            )

        return _memo(self, "_encoded", build)


def receipt_root(receipts: Iterable[Receipt]) -> bytes:
    return digest("receipts", [r.encoded() for r in receipts])


def block_digest(index: int, prev_digest: bytes, transactions: Sequence[Transaction], root: bytes) -> bytes:
    return digest("block", index, prev_digest, [tx.encoded() for tx in transactions], root)


@dataclass(frozen=True)
class Block:
    index: int
    prev_digest: bytes
    transactions: tuple[Transaction, ...]
    receipt_root: bytes
    digest: bytes

    @classmethod
    def make(cls, index: int, prev_digest: bytes, transactions: Sequence[Transaction], root: bytes) -> "Block":
        txs = tuple(transactions)
        return cls(index, prev_digest, txs, root, block_digest(index, prev_digest, txs, root))

    def recompute_digest(self) -> bytes:
        return _memo(self, "_recomputed", lambda: block_digest(
            self.index, self.prev_digest, self.transactions, self.receipt_root
        ))


EMPTY_ROOT = receipt_root(())
GENESIS = Block.make(0, bytes(32), (), EMPTY_ROOT)


def verify_blocks(blocks: Sequence[Block]) -> bool:
    """Recompute every digest and check linkage back to the fixed genesis block."""
    if not blocks or blocks[0] != GENESIS:
        return False
    for i, block in enumerate(blocks):
        if block.index != i or block.recompute_digest() != block.digest:
            return False
        if i and block.prev_digest != blocks[i - 1].digest:
            return False
    return True


# ---------------------------------------------------------------------------
# contract execution


class ContractAbort(Exception):
    """Raised inside a contract call to roll back the whole transaction."""

    def __init__(self, reason: str, events: Sequence[tuple[str, str, dict]] = ()):
        super().__init__(reason)
        self.reason = reason
        self.events = list(events)


class Contract:
    """Base class for contract state machines.

    Operations are methods named ``op_<name>(self, ctx, **args)``. All mutable
    state lives in ``self.state`` so the ledger can snapshot and restore it.
    """

    kind: ClassVar[str] = "Contract"

    def __init__(self, address: str, state: Any):
        self.address = address
        self.state = state

    @classmethod
    def construct(cls, ctx: "CallContext", **args) -> Any:
        raise NotImplementedError

    def invoke(self, ctx: "CallContext", op: str, args: dict) -> Any:
        method = getattr(self, "op_" + op, None)
        if method is None:
            raise ContractAbort("no-op")
        try:
            inspect.signature(method).bind(ctx, **args)
        except TypeError:
            raise ContractAbort("bad-args") from None
        return method(ctx, **args)

    def to_json(self) -> Any:
        return jsonable(self.state)


def jsonable(obj: Any) -> Any:
    if hasattr(obj, "__dataclass_fields__"):
        return {k: jsonable(getattr(obj, k)) for k in obj.__dataclass_fields__}
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, (set, frozenset)):
        return sorted(jsonable(v) for v in obj)
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    return obj


@dataclass
class _Journal:
    snapshots: dict[str, Any] = field(default_factory=dict)
    deployed: list[str] = field(default_factory=list)
    events: list[tuple[str, str, dict]] = field(default_factory=list)


class CallContext:
    """What a contract sees while executing: caller, block height, nested calls, events."""

    def __init__(self, ledger: "Ledger", journal: _Journal, address: str, sender: str, origin: str):
        self._ledger = ledger
        self._journal = journal
        self.address = address
        self.sender = sender
        self.origin = origin
        self.block = ledger.height

    def call(self, address: str, op: str, **args) -> Any:
        return self._ledger._invoke(self._journal, address, op, args, self.address, self.origin)

    def view(self, address: str) -> Contract:
        contract = self._ledger.contracts.get(address)
        if contract is None:
            raise ContractAbort("no-contract")
        return contract

    def exists(self, address: str) -> bool:
        return address in self._ledger.contracts

    def emit(self, name: str, **args) -> None:
        self._journal.events.append((self.address, name, args))

    def abort(self, reason: str, event: str | None = None, **args):
        events = [(self.address, event, args)] if event else []
        raise ContractAbort(reason, events)


class Ledger:
    def __init__(self):
        self.blocks: list[Block] = [GENESIS]
        self.contracts: dict[str, Contract] = {}
        self.receipts: list[Receipt] = []
        self._keys: dict[str, bytes] = {}
        self._nonces: dict[str, int] = {}
        self._pending: list[tuple[Transaction, Receipt]] = []
        self._seq = 0

    @property
    def height(self) -> int:
        """Index of the block currently being assembled."""
        return len(self.blocks)

    def register(self, identity: Identity) -> None:
        if identity.id in self._keys and self._keys[identity.id] != identity.key:
            raise ValueError(f"identity {identity.id!r} already registered with another key")
        self._keys[identity.id] = identity.key

    def next_nonce(self, sender: str) -> int:
        return self._nonces.get(sender, -1) + 1

    def contract(self, address: str) -> Contract:
        return self.contracts[address]

    # -- transactions -------------------------------------------------------

    def submit(self, tx: Transaction) -> Receipt:
        key = self._keys.get(tx.sender)
        expected = key and hmac.new(
            key, signing_bytes(tx.sender, tx.target, tx.op, tx.payload, tx.nonce), "sha256"
        ).digest()
        if not key or not hmac.compare_digest(expected, tx.signature):
            return self._receipt(tx, REJECTED, "auth", [], None, included=False)
        if tx.nonce <= self._nonces.get(tx.sender, -1):
            return self._receipt(tx, REJECTED, "nonce", [], None, included=False)
        self._nonces[tx.sender] = tx.nonce
        try:
            args = tx.args
            if not isinstance(args, dict):
                raise ValueError
        except ValueError:
            return self._receipt(tx, REJECTED, "bad-payload", [], None, included=True)

        journal = _Journal()
        try:
            if tx.op == DEPLOY and tx.target == "":
                result = self._deploy(journal, tx, args)
            else:
                result = self._invoke(journal, tx.target, tx.op, args, tx.sender, tx.sender)
        except ContractAbort as abort:
            self._rollback(journal)
            return self._receipt(tx, REJECTED, abort.reason, abort.events, None, included=True)
        return self._receipt(tx, ACCEPTED, None, journal.events, jsonable(result), included=True)

    def _receipt(self, tx, status, reason, raw_events, result, included) -> Receipt:
        self._seq += 1
        events = tuple(
            Event(self._seq, i, c, name, jsonable(args)) for i, (c, name, args) in enumerate(raw_events)
        )
        receipt = Receipt(
            seq=self._seq,
            tx_digest=tx.digest,
            status=status,
            reason=reason,
            events=events,
            result=result,
            block=self.height if included else None,
            sender=tx.sender,
            target=tx.target,
            op=tx.op,
        )
        self.receipts.append(receipt)
        if included:
            self._pending.append((tx, receipt))
        return receipt

    def _deploy(self, journal: _Journal, tx: Transaction, args: dict) -> str:
        kind = args.get("contract")
        cls = CONTRACT_TYPES.get(kind)
        if cls is None:
            raise ContractAbort("unknown-contract-type")
        address = contract_address(tx.sender, tx.nonce)
        ctor_args = args.get("args", {})
        ctx = CallContext(self, journal, address, tx.sender, tx.sender)
        try:
            inspect.signature(cls.construct).bind(ctx, **ctor_args)
        except TypeError:
            raise ContractAbort("bad-args") from None
        state = cls.construct(ctx, **ctor_args)
        self.contracts[address] = cls(address, state)
        journal.deployed.append(address)
        return address

    def _invoke(self, journal: _Journal, address: str, op: str, args: dict, sender: str, origin: str) -> Any:
        contract = self.contracts.get(address)
        if contract is None:
            raise ContractAbort("no-contract")
        if address not in journal.snapshots:
            journal.snapshots[address] = copy.deepcopy(contract.state)
        ctx = CallContext(self, journal, address, sender, origin)
        return contract.invoke(ctx, op, args)

    def _rollback(self, journal: _Journal) -> None:
        for address, state in journal.snapshots.items():
            if address in self.contracts:
                self.contracts[address].state = state
        for address in journal.deployed:
            self.contracts.pop(address, None)

    # -- blocks -------------------------------------------------------------

    def seal_block(self) -> Block:
        txs = [tx for tx, _ in self._pending]
        root = receipt_root(r for _, r in self._pending)
        block = Block.make(self.height, self.blocks[-1].digest, txs, root)
        self.blocks.append(block)
        self._pending = []
        return block

    def receipts_in_block(self, index: int) -> list[Receipt]:
        return [r for r in self.receipts if r.block == index]

    def verify_chain(self) -> bool:
        if not verify_blocks(self.blocks):
            return False
        by_block: dict[int, list[Receipt]] = {}
        for r in self.receipts:
            if r.block is not None and r.block < self.height:
                by_block.setdefault(r.block, []).append(r)
        for block in self.blocks:
            receipts = by_block.get(block.index, [])
            if receipt_root(receipts) != block.receipt_root:
                return False
            if len(receipts) != len(block.transactions):
                return False
            if any(r.tx_digest != tx.digest for r, tx in zip(receipts, block.transactions)):
                return False
        return True

    # -- queries ------------------------------------------------------------

    def query_events(self, contract: str | None = None, name: str | None = None) -> list[Event]:
        """Events from chain-included receipts in block order, then intra-block order."""
        out = []
        for r in sorted((r for r in self.receipts if r.block is not None), key=lambda r: (r.block, r.seq)):
            for e in r.events:
                if (contract is None or e.contract == contract) and (name is None or e.name == name):
                    out.append(e)
        return out

    def state_digest(self) -> str:
        state = {addr: [c.kind, c.to_json()] for addr, c in sorted(self.contracts.items())}
        return hashlib.sha256(canonical_json(state).encode()).hexdigest()

    # -- audit log ----------------------------------------------------------

    def audit_records(self) -> list[dict]:
        tx_by_digest = {tx.digest: tx for b in self.blocks for tx in b.transactions}
        tx_by_digest.update({tx.digest: tx for tx, _ in self._pending})
        return [audit_record(r, tx_by_digest.get(r.tx_digest), self.blocks) for r in self.receipts]

    def export_audit_log(self, out: TextIO) -> None:
        for rec in self.audit_records():
            out.write(json.dumps(rec, separators=(",", ":")) + "\n")


def audit_record(r: Receipt, tx: Transaction | None, blocks: Sequence[Block]) -> dict:
    sealed = r.block is not None and r.block < len(blocks)
    return {
        "seq": r.seq,
        "block": r.block,
        "sender": r.sender,
        "target": r.target,
        "op": r.op,
        "status": r.status,
        "events": [[e.contract, e.name, e.args] for e in r.events],
        "reason": r.reason,
        "result": r.result,
        "nonce": tx.nonce if tx else None,
        "payload": tx.payload.decode() if tx else None,
        "signature": tx.signature.hex() if tx else None,
        "tx_digest": r.tx_digest.hex(),
        "block_prev": blocks[r.block].prev_digest.hex() if sealed else None,
        "block_digest": blocks[r.block].digest.hex() if sealed else None,
    }


def verify_audit_records(records: Sequence[dict]) -> list[str]:
    """Offline check of an exported audit log: digests, receipt roots and chain linkage.

    Empty blocks leave no records, so their digests are recomputed to bridge gaps.
    """
    problems: list[str] = []
    seqs = [rec["seq"] for rec in records]
    if seqs != sorted(seqs) or len(set(seqs)) != len(seqs):
        problems.append("receipt sequence numbers are not strictly increasing")
    groups: dict[int, list[dict]] = {}
    for rec in records:
        if rec.get("block") is not None and rec.get("block_digest") is not None:
            groups.setdefault(rec["block"], []).append(rec)

    prev = GENESIS.digest
    index = 1
    for b in sorted(groups):
        while index < b:
            prev = block_digest(index, prev, (), EMPTY_ROOT)
            index += 1
        recs = groups[b]
        try:
            txs = [
                Transaction(
                    rec["sender"], rec["target"], rec["op"], rec["payload"].encode(),
                    rec["nonce"], bytes.fromhex(rec["signature"]),
                )
                for rec in recs
            ]
            receipts = [
                Receipt(
                    rec["seq"], bytes.fromhex(rec["tx_digest"]), rec["status"], rec["reason"],
                    tuple(Event(rec["seq"], i, c, n, a) for i, (c, n, a) in enumerate(rec["events"])),
                    rec["result"],
                )
                for rec in recs
            ]
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            problems.append(f"block {b}: malformed record ({exc})")
            return problems
        for tx, r in zip(txs, receipts):
            if tx.digest != r.tx_digest:
                problems.append(f"seq {r.seq}: transaction digest mismatch")
        stored_prev = bytes.fromhex(recs[0]["block_prev"])
        stored = bytes.fromhex(recs[0]["block_digest"])
        if any(rec["block_digest"] != recs[0]["block_digest"] for rec in recs):
            problems.append(f"block {b}: records disagree on block digest")
        if stored_prev != prev:
            problems.append(f"block {b}: previous-digest link broken")
        if block_digest(b, stored_prev, txs, receipt_root(receipts)) != stored:
            problems.append(f"block {b}: digest mismatch")
        prev = stored
        index = b + 1
    return problems
