"""Append-only hash-chained transaction log with deterministic replay.

Committed bytes can never be rewritten: every block links to its
predecessor by hash, and verify_chain rechecks every link, hash and
signature from genesis. State is only ever obtained by folding the chain
through the contract rules, so two nodes replaying the same chain always
arrive at the same state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
import json

from .crypto import Keyring, ZERO_HASH, canonical_json, hash_hex
from .errors import BadHash, BadProof, BrokenLink, ParseError, ReplayError
from .state import LedgerState

TX_KINDS = ("Reserve", "Release", "Transfer", "OccupancyReport",
            "SwitchCommand", "SwitchAck")


@dataclass(frozen=True)
class Transaction:
    kind: str
    sender: str
    payload: dict
    nonce: int
    signature: str = ""
    txid: str = ""

    def signing_bytes(self) -> bytes:
        return canonical_json({
            "kind": self.kind,
            "nonce": self.nonce,
            "payload": self.payload,
            "sender": self.sender,
        })

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "nonce": self.nonce,
            "payload": self.payload,
            "sender": self.sender,
            "signature": self.signature,
            "txid": self.txid,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transaction":
        missing = {"kind", "nonce", "payload", "sender", "signature", "txid"} - set(d)
        if missing:
            raise ParseError(f"transaction missing keys: {sorted(missing)}")
        if d["kind"] not in TX_KINDS:
            raise ParseError(f"unknown transaction kind: {d['kind']!r}")
        return cls(kind=d["kind"], sender=d["sender"], payload=d["payload"],
                   nonce=d["nonce"], signature=d["signature"], txid=d["txid"])


def canonical_bytes(value) -> bytes:
    """Canonical byte form of a Transaction or LedgerBlock.

    Hash and signature fields (and the consensus proof, which binds to the
    block hash and therefore cannot be hashed into it) are excluded.
    """
    if isinstance(value, Transaction):
        return value.signing_bytes()
    if isinstance(value, LedgerBlock):
        return value.hashing_bytes()
    raise TypeError(f"no canonical form for {type(value).__name__}")


def make_tx(keyring: Keyring, sender: str, kind: str, payload: dict,
            nonce: int, hash_algo: str = "sha256") -> Transaction:
    """Build a signed transaction with its txid filled in."""
    tx = Transaction(kind=kind, sender=sender, payload=payload, nonce=nonce)
    body = tx.signing_bytes()
    return replace(
        tx,
        txid=hash_hex(body, hash_algo),
        signature=keyring.sign(sender, body).hex(),
    )


@dataclass(frozen=True)
class LedgerBlock:
    index: int
    prev_hash: str
    tx_list: tuple[Transaction, ...]
    proposer: str
    now: int
    genesis: dict | None = None
    proof: dict = field(default_factory=dict)
    block_hash: str = ""

    def hashing_bytes(self) -> bytes:
        return canonical_json({
            "genesis": self.genesis,
            "index": self.index,
            "now": self.now,
            "prev_hash": self.prev_hash,
            "proposer": self.proposer,
            "tx_list": [tx.to_dict() for tx in self.tx_list],
        })

    def with_proof(self, proof: dict) -> "LedgerBlock":
        """Attach a consensus proof; the block hash is unaffected."""
        return replace(self, proof=proof)

    def to_dict(self) -> dict:
        return {
            "block_hash": self.block_hash,
            "genesis": self.genesis,
            "index": self.index,
            "now": self.now,
            "prev_hash": self.prev_hash,
            "proof": self.proof,
            "proposer": self.proposer,
            "tx_list": [tx.to_dict() for tx in self.tx_list],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LedgerBlock":
        required = {"block_hash", "genesis", "index", "now", "prev_hash",
                    "proof", "proposer", "tx_list"}
        missing = required - set(d)
        if missing:
            raise ParseError(f"block missing keys: {sorted(missing)}")
        return cls(
            index=d["index"],
            prev_hash=d["prev_hash"],
            tx_list=tuple(Transaction.from_dict(t) for t in d["tx_list"]),
            proposer=d["proposer"],
            now=d["now"],
            genesis=d["genesis"],
            proof=d["proof"],
            block_hash=d["block_hash"],
        )


def seal_block(block: LedgerBlock, hash_algo: str = "sha256") -> LedgerBlock:
    """Fill in block_hash from the canonical bytes."""
    return replace(block, block_hash=hash_hex(block.hashing_bytes(), hash_algo))


@dataclass(frozen=True)
class Chain:
    blocks: tuple[LedgerBlock, ...] = ()

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def head(self) -> LedgerBlock:
        return self.blocks[-1]

    @property
    def head_hash(self) -> str:
        return self.blocks[-1].block_hash if self.blocks else ZERO_HASH

    @property
    def genesis_payload(self) -> dict:
        return self.blocks[0].genesis or {}

    def hash_algo(self) -> str:
        return self.genesis_payload.get("hash_algo", "sha256")


def append_block(chain: Chain, block: LedgerBlock,
                 proof_verifier=None) -> Chain:
    """Return a new chain extended by `block`; the input chain is unchanged.

    Raises BrokenLink / BadHash / BadProof; never mutates history.
    """
    if block.index != len(chain):
        raise BrokenLink(f"expected index {len(chain)}, got {block.index}")
    if block.prev_hash != chain.head_hash:
        raise BrokenLink(f"prev_hash {block.prev_hash} does not match head "
                         f"{chain.head_hash}")
    algo = chain.hash_algo() if chain.blocks else (
        (block.genesis or {}).get("hash_algo", "sha256"))
    if block.block_hash != hash_hex(block.hashing_bytes(), algo):
        raise BadHash(f"block {block.index} hash mismatch")
    if proof_verifier is not None and not proof_verifier(block):
        raise BadProof(f"block {block.index} proof rejected")
    return Chain(chain.blocks + (block,))


def verify_chain(chain: Chain, keyring: Keyring | None = None,
                 proof_verifier=None) -> int | None:
    """Scan from genesis; return the first failing block index, or None.

    Checks index sequence, prev-hash links, block hashes, transaction ids
    and signatures. Block proofs are checked when a verifier is supplied.
    """
    if not chain.blocks:
        return None
    algo = chain.hash_algo()
    prev_hash = ZERO_HASH
    for i, block in enumerate(chain.blocks):
        if block.index != i or block.prev_hash != prev_hash:
            return i
        if block.block_hash != hash_hex(block.hashing_bytes(), algo):
            return i
        if i == 0 and block.genesis is None:
            return 0
        for tx in block.tx_list:
            body = tx.signing_bytes()
            if tx.txid != hash_hex(body, algo):
                return i
            if keyring is not None:
                pubkey_hex = chain.genesis_payload.get("keys", {}).get(tx.sender)
                if pubkey_hex is None:
                    return i
                try:
                    sig = bytes.fromhex(tx.signature)
                    pubkey = bytes.fromhex(pubkey_hex)
                except ValueError:
                    return i
                if not keyring.verify(pubkey, body, sig):
                    return i
        if proof_verifier is not None and i > 0 and not proof_verifier(block):
            return i
        prev_hash = block.block_hash
    return None


def derive_state(chain: Chain, topo, rules) -> LedgerState:
    """Fold every transaction through the contract; deterministic.

    Raises ReplayError if any committed transaction fails validation,
    which signals a corrupted or rule-divergent chain.
    """
    if not chain.blocks:
        raise ReplayError("cannot derive state from an empty chain")
    state = LedgerState()
    genesis = chain.blocks[0].genesis
    if genesis is None:
        raise ReplayError("genesis block carries no genesis payload")
    rules.apply_genesis(state, genesis, topo)
    for block in chain.blocks:
        state.tick_of_head = block.now
        for tx in block.tx_list:
            last = state.nonces.get(tx.sender, 0)
            if tx.nonce <= last:
                raise ReplayError(
                    f"block {block.index}: nonce {tx.nonce} of {tx.sender} "
                    f"not above committed {last}")
            decision = rules.validate(state, topo, tx, block.now)
            if not decision.accepted:
                raise ReplayError(
                    f"block {block.index}: committed tx {tx.txid[:12]} rejected "
                    f"on replay: {decision.reason}")
            rules.apply(state, topo, tx)
            state.nonces[tx.sender] = tx.nonce
    return state


def state_hash(state: LedgerState, algo: str = "sha256") -> str:
    return hash_hex(canonical_json(state.canonical()), algo)


def save_chain(chain: Chain, path: str | Path) -> None:
    """Persist as line-delimited canonical JSON, one block per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for block in chain.blocks:
            fh.write(canonical_json(block.to_dict()).decode("utf-8"))
            fh.write("\n")


def _chain_file_lines(path: str | Path) -> list[bytes]:
    # Byte-level split: a flipped byte that breaks UTF-8 must still be
    # attributable to the line (= block index) it landed in.
    return Path(path).read_bytes().split(b"\n")


def load_chain(path: str | Path) -> Chain:
    blocks = []
    for lineno, line in enumerate(_chain_file_lines(path)):
        if not line.strip():
            continue
        try:
            blocks.append(LedgerBlock.from_dict(json.loads(line)))
        except (UnicodeDecodeError, json.JSONDecodeError, ParseError,
                TypeError, KeyError) as exc:
            raise ParseError(f"chain file line {lineno}: {exc}") from None
    return Chain(tuple(blocks))


def verify_chain_file(path: str | Path, keyring: Keyring | None = None,
                      proof_verifier=None) -> int | None:
    """Like verify_chain but over a persisted file; a line that fails to
    parse counts as a failure at that line's index."""
    blocks = []
    for lineno, line in enumerate(_chain_file_lines(path)):
        if not line.strip():
            continue
        try:
            block = LedgerBlock.from_dict(json.loads(line))
        except (UnicodeDecodeError, json.JSONDecodeError, ParseError,
                TypeError, KeyError):
            return min(lineno, len(blocks))
        blocks.append(block)
    return verify_chain(Chain(tuple(blocks)), keyring, proof_verifier)
