"""Commit rules: who may seal a block, what proof it needs, which of two
histories wins.

Three modes share one pipeline:
  poa   -- scheduled proposer signs the block hash.
  pow   -- scheduled proposer grinds a nonce over the block hash.
  vote  -- scheduled proposer gathers signed yes-votes until the threshold.

The schedule is round-robin by block index with timeout takeover: if the
scheduled proposer stays silent, the next whitelisted node in order becomes
eligible after proposer_timeout_ticks, then the next, and so on. That keeps
minority partitions live, which is exactly what makes forks possible; fork
choice is (longest chain, then lexicographically smaller head hash).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .crypto import Keyring, canonical_json, hash_hex
from .errors import ConfigError
from .ledger import LedgerBlock

MODES = ("poa", "pow", "vote")


@dataclass(frozen=True)
class Threshold:
    kind: str  # "at_least_n" | "fraction"
    value: int | str  # count, or a fraction rendered as "num/den"

    def required(self, n_nodes: int) -> int:
        if self.kind == "at_least_n":
            return int(self.value)
        frac = Fraction(self.value)
        return int(math.ceil(frac * n_nodes))


def parse_threshold(raw: dict | None) -> Threshold:
    if raw is None:
        return Threshold("at_least_n", 1)
    if not isinstance(raw, dict) or len(raw) != 1:
        raise ConfigError(f"threshold must have exactly one key: {raw!r}")
    if "at_least_n" in raw:
        n = raw["at_least_n"]
        if not isinstance(n, int) or n < 1:
            raise ConfigError(f"at_least_n must be a positive integer: {n!r}")
        return Threshold("at_least_n", n)
    if "fraction" in raw:
        f = raw["fraction"]
        try:
            frac = Fraction(str(f)).limit_denominator(1000)
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"unparseable fraction: {f!r}") from None
        if not 0 < frac <= 1:
            raise ConfigError(f"fraction must be in (0, 1]: {f!r}")
        return Threshold("fraction", f"{frac.numerator}/{frac.denominator}")
    raise ConfigError(f"threshold needs at_least_n or fraction: {raw!r}")


@dataclass(frozen=True)
class ConsensusConfig:
    mode: str
    order: tuple[str, ...]  # proposer rotation; whitelisted node ids
    difficulty_bits: int = 8
    threshold: Threshold = Threshold("at_least_n", 1)
    proposer_timeout_ticks: int = 8
    heads_every: int = 5
    block_interval_ticks: int = 2

    def to_genesis(self) -> dict:
        d: dict = {"mode": self.mode, "order": list(self.order),
                   "block_interval_ticks": self.block_interval_ticks}
        if self.mode == "pow":
            d["difficulty_bits"] = self.difficulty_bits
        if self.mode == "vote":
            d["threshold"] = ({"at_least_n": self.threshold.value}
                              if self.threshold.kind == "at_least_n"
                              else {"fraction": self.threshold.value})
        return d


_CONSENSUS_KEYS = frozenset({
    "mode", "order", "difficulty_bits", "threshold",
    "proposer_timeout_ticks", "heads_every", "block_interval_ticks",
})


def parse_consensus(raw: dict, whitelisted: list[str]) -> ConsensusConfig:
    if not isinstance(raw, dict):
        raise ConfigError("consensus section must be an object")
    unknown = set(raw) - _CONSENSUS_KEYS
    if unknown:
        raise ConfigError(f"unknown consensus keys: {sorted(unknown)}")
    mode = raw.get("mode")
    if mode not in MODES:
        raise ConfigError(f"consensus mode must be one of {MODES}, got {mode!r}")
    order = raw.get("order") or sorted(whitelisted)
    if (not isinstance(order, list) or not order
            or any(n not in whitelisted for n in order)):
        raise ConfigError(f"proposer order must name whitelisted nodes: {order!r}")
    if len(set(order)) != len(order):
        raise ConfigError("proposer order repeats a node")
    bits = raw.get("difficulty_bits", 8)
    if not isinstance(bits, int) or not 0 < bits <= 32:
        raise ConfigError(f"difficulty_bits must be in 1..32: {bits!r}")
    timeout = raw.get("proposer_timeout_ticks", 8)
    if not isinstance(timeout, int) or timeout < 1:
        raise ConfigError(f"proposer_timeout_ticks must be >= 1: {timeout!r}")
    heads_every = raw.get("heads_every", 5)
    if not isinstance(heads_every, int) or heads_every < 1:
        raise ConfigError(f"heads_every must be >= 1: {heads_every!r}")
    interval = raw.get("block_interval_ticks", 2)
    if not isinstance(interval, int) or interval < 1:
        raise ConfigError(
            f"block_interval_ticks must be >= 1: {interval!r}")
    return ConsensusConfig(
        mode=mode,
        order=tuple(order),
        difficulty_bits=bits,
        threshold=parse_threshold(raw.get("threshold")),
        proposer_timeout_ticks=timeout,
        heads_every=heads_every,
        block_interval_ticks=interval,
    )


def eligible_proposers(config: ConsensusConfig, index: int,
                       stall_ticks: int) -> list[str]:
    """Nodes allowed to propose block `index` after the chain has sat at
    index-1 for stall_ticks, primary first."""
    n = len(config.order)
    takeovers = min(stall_ticks // config.proposer_timeout_ticks, n - 1)
    return [config.order[(index + j) % n] for j in range(takeovers + 1)]


def evaluate_votes(yes: int, no: int, n_nodes: int, required: int) -> str:
    if yes >= required:
        return "committed"
    undecided = n_nodes - yes - no
    if yes + undecided < required:
        return "rejected"
    return "pending"


# --- proofs ---------------------------------------------------------------


def leading_zero_bits(hexdigest: str) -> int:
    value = int(hexdigest, 16)
    width = len(hexdigest) * 4
    return width - value.bit_length()


def pow_digest(block_hash: str, nonce: int, algo: str = "sha256") -> str:
    return hash_hex(f"{block_hash}:{nonce}".encode(), algo)


def mine_pow(block_hash: str, difficulty_bits: int, algo: str = "sha256",
             start_nonce: int = 0, budget: int = 50000) -> int | None:
    """Scan nonces from start_nonce; None when the budget runs out (callers
    resume from start_nonce + budget next tick)."""
    for nonce in range(start_nonce, start_nonce + budget):
        if leading_zero_bits(pow_digest(block_hash, nonce, algo)) >= difficulty_bits:
            return nonce
    return None


def vote_signing_bytes(block_hash: str, voter: str, accept: bool) -> bytes:
    return canonical_json({"accept": accept, "block_hash": block_hash,
                           "voter": voter})


@dataclass(frozen=True)
class Vote:
    block_hash: str
    voter: str
    accept: bool
    signature: str

    def to_dict(self) -> dict:
        return {"block_hash": self.block_hash, "voter": self.voter,
                "accept": self.accept, "signature": self.signature}

    @classmethod
    def from_dict(cls, d: dict) -> "Vote":
        return cls(d["block_hash"], d["voter"], bool(d["accept"]),
                   d["signature"])


def make_vote(keyring: Keyring, node_addr: str, block_hash: str, voter: str,
              accept: bool) -> Vote:
    sig = keyring.sign(node_addr, vote_signing_bytes(block_hash, voter, accept))
    return Vote(block_hash, voter, accept, sig.hex())


class ProofAuthority:
    """Builds and checks block proofs against the genesis node registry."""

    def __init__(self, config: ConsensusConfig, nodes: dict[str, dict],
                 keyring: Keyring, hash_algo: str = "sha256"):
        self.config = config
        self.nodes = nodes  # node id -> {"pubkey": hex, "whitelisted": bool}
        self.keyring = keyring
        self.hash_algo = hash_algo

    def node_pubkey(self, node_id: str) -> bytes | None:
        entry = self.nodes.get(node_id)
        if not entry or not entry.get("whitelisted", False):
            return None
        try:
            return bytes.fromhex(entry["pubkey"])
        except (KeyError, ValueError):
            return None

    def node_addr(self, node_id: str) -> str:
        from .crypto import wallet_address
        return wallet_address(bytes.fromhex(self.nodes[node_id]["pubkey"]),
                              self.hash_algo)

    # building ------------------------------------------------------------

    def poa_proof(self, node_id: str, block_hash: str) -> dict:
        sig = self.keyring.sign(self.node_addr(node_id), block_hash.encode())
        return {"signature": sig.hex()}

    def pow_proof(self, nonce: int) -> dict:
        return {"nonce": nonce}

    def vote_proof(self, votes: list[Vote]) -> dict:
        accepted = sorted((v for v in votes if v.accept), key=lambda v: v.voter)
        return {"votes": [v.to_dict() for v in accepted]}

    # checking ------------------------------------------------------------

    def verify(self, block: LedgerBlock) -> bool:
        if block.index == 0:
            return True
        if not isinstance(block.proof, dict):
            return False
        pubkey = self.node_pubkey(block.proposer)
        if pubkey is None:
            return False
        if block.proposer not in self.config.order:
            return False
        if self.config.mode == "poa":
            return self._verify_poa(block, pubkey)
        if self.config.mode == "pow":
            return self._verify_pow(block)
        return self._verify_votes(block)

    def _verify_poa(self, block: LedgerBlock, pubkey: bytes) -> bool:
        sig_hex = block.proof.get("signature")
        if not isinstance(sig_hex, str):
            return False
        try:
            sig = bytes.fromhex(sig_hex)
        except ValueError:
            return False
        return self.keyring.verify(pubkey, block.block_hash.encode(), sig)

    def _verify_pow(self, block: LedgerBlock) -> bool:
        nonce = block.proof.get("nonce")
        if not isinstance(nonce, int) or nonce < 0:
            return False
        digest = pow_digest(block.block_hash, nonce, self.hash_algo)
        return leading_zero_bits(digest) >= self.config.difficulty_bits

    def _verify_votes(self, block: LedgerBlock) -> bool:
        raw_votes = block.proof.get("votes")
        if not isinstance(raw_votes, list):
            return False
        required = self.config.threshold.required(len(self.config.order))
        seen: set[str] = set()
        valid = 0
        for raw in raw_votes:
            try:
                vote = Vote.from_dict(raw)
            except (KeyError, TypeError):
                return False
            if (not vote.accept or vote.block_hash != block.block_hash
                    or vote.voter in seen):
                return False
            pubkey = self.node_pubkey(vote.voter)
            if pubkey is None or vote.voter not in self.config.order:
                return False
            try:
                sig = bytes.fromhex(vote.signature)
            except ValueError:
                return False
            if not self.keyring.verify(
                    pubkey, vote_signing_bytes(vote.block_hash, vote.voter,
                                               True), sig):
                return False
            seen.add(vote.voter)
            valid += 1
        return valid >= required


def better_head(cur_len: int, cur_head: str, cand_len: int,
                cand_head: str) -> bool:
    """True when the candidate branch wins fork choice over the current one."""
    if cand_len != cur_len:
        return cand_len > cur_len
    return cand_head < cur_head
