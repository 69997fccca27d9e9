"""A ledger node: accepts transactions, proposes and commits blocks under
the configured consensus mode, syncs with peers, and survives forks.

Message kinds on the wire: TxGossip, BlockProposal, BlockVote, BlockCommit,
HeadAnnounce, ChainRequest, ChainResponse. All bodies are plain JSON dicts.

Ingress rejections (Malformed, BadSignature, UnknownSender, StaleNonce,
Duplicate) are transport-level and distinct from gatekeeper reject reasons;
a transaction that passes ingress sits in the pool until a proposer either
commits it or drops it with a gatekeeper reason.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .consensus import (ConsensusConfig, ProofAuthority, Vote, better_head,
                        eligible_proposers, evaluate_votes, make_vote,
                        mine_pow, vote_signing_bytes)
from .contract import (CONFLICT, ContractRules, expire_reservations,
                       payload_well_formed)
from .crypto import ZERO_HASH, Keyring, hash_hex
from .errors import RailchainError
from .ledger import (Chain, LedgerBlock, Transaction, append_block,
                     derive_state, seal_block, state_hash, verify_chain)
from .netsim import Message, Network
from .state import LedgerState
from .topology import Topology

INGRESS_OK = "ok"
MALFORMED = "Malformed"
BAD_SIGNATURE = "BadSignature"
UNKNOWN_SENDER = "UnknownSender"
STALE_NONCE = "StaleNonce"
DUPLICATE = "Duplicate"

POW_BUDGET_PER_TICK = 4096


@dataclass
class PendingProposal:
    block: LedgerBlock
    votes: dict[str, Vote]
    started: int


@dataclass
class MiningJob:
    block: LedgerBlock
    next_nonce: int = 0


def _tx_sort_key(tx: Transaction) -> tuple:
    return (tx.sender, tx.nonce, tx.txid)


class Node:
    def __init__(self, node_id: str, chain: Chain, topo: Topology,
                 rules: ContractRules, config: ConsensusConfig,
                 keyring: Keyring, network: Network,
                 emit: Callable[..., None]):
        self.id = node_id
        self.topo = topo
        self.rules = rules
        self.config = config
        self.keyring = keyring
        self.network = network
        self.emit = emit  # emit(tick, kind, **fields)

        self.chain = chain
        self.authority = ProofAuthority(
            config, chain.genesis_payload.get("nodes", {}), keyring,
            chain.hash_algo())
        self.state: LedgerState = derive_state(chain, topo, rules)
        self.chain_index: dict[str, int] = {
            b.block_hash: b.index for b in chain.blocks}

        self.pool: dict[str, Transaction] = {}
        self.pool_since: dict[str, int] = {}  # txid -> arrival tick
        self.statuses: dict[str, tuple] = {}  # txid -> (status, detail|None)
        self.reproposed: set[str] = set()
        self.alarmed: set[str] = set()
        self.blockstore: dict[str, LedgerBlock] = {
            b.block_hash: b for b in chain.blocks}

        self.last_commit_tick = 0
        self.mining: MiningJob | None = None
        self.proposal: PendingProposal | None = None
        self.heartbeats_on = True
        self._keys = chain.genesis_payload.get("keys", {})
        self._expiry_memo: tuple[int, int, list] | None = None

    # --- public queries ---------------------------------------------------

    def head_hash(self) -> str:
        return self.chain.head_hash

    def height(self) -> int:
        return len(self.chain)

    def tx_status(self, txid: str) -> tuple:
        return self.statuses.get(txid, ("unknown", None))

    def state_snapshot(self) -> LedgerState:
        return self.state.copy()

    def state_digest(self) -> str:
        return state_hash(self.state, self.chain.hash_algo())

    def expired_reservations(self, now: int) -> list[dict]:
        """Release payloads due at `now`, shared by every agent homed here
        (the scan is over all live reservations, so compute it once per
        tick and head)."""
        memo = self._expiry_memo
        if memo is None or memo[0] != now or memo[1] != self.height():
            memo = (now, self.height(), expire_reservations(self.state, now))
            self._expiry_memo = memo
        return memo[2]

    # --- transaction ingress ------------------------------------------------

    def submit_tx(self, tx: Transaction, now: int,
                  gossip: bool = True) -> tuple[bool, str]:
        verdict = self._ingress_check(tx)
        if verdict != INGRESS_OK:
            return False, verdict
        self.pool[tx.txid] = tx
        self.pool_since[tx.txid] = now
        self.statuses[tx.txid] = ("pending", None)
        if gossip:
            self.emit(now, "TxSubmitted", node=self.id, txid=tx.txid,
                      tx_kind=tx.kind, sender=tx.sender)
            self.network.broadcast(self.id, "TxGossip",
                                   {"tx": tx.to_dict()}, now)
        return True, INGRESS_OK

    def _ingress_check(self, tx: Transaction) -> str:
        if tx.txid in self.pool or tx.txid in self.statuses:
            return DUPLICATE
        if tx.kind is None or not payload_well_formed(tx):
            return MALFORMED
        algo = self.chain.hash_algo()
        if tx.txid != hash_hex(tx.signing_bytes(), algo):
            return MALFORMED
        pubkey_hex = self._keys.get(tx.sender)
        if pubkey_hex is None:
            return UNKNOWN_SENDER
        try:
            pubkey = bytes.fromhex(pubkey_hex)
            sig = bytes.fromhex(tx.signature)
        except ValueError:
            return MALFORMED
        if not self.keyring.verify(pubkey, tx.signing_bytes(), sig):
            return BAD_SIGNATURE
        if tx.nonce <= self.state.nonces.get(tx.sender, 0):
            return STALE_NONCE
        return INGRESS_OK

    # --- per-tick work ------------------------------------------------------

    def on_tick(self, now: int) -> None:
        if now > 0 and now % self.config.heads_every == 0:
            self.network.broadcast(self.id, "HeadAnnounce", {
                "head_hash": self.head_hash(),
                "height": self.height(),
            }, now)
        self._drive_proposal(now)

    def _drive_proposal(self, now: int) -> None:
        if not self.pool:
            self.mining = None
            if self.proposal is not None and (
                    now - self.proposal.started
                    > self.config.proposer_timeout_ticks):
                self.proposal = None
            self._drive_heartbeat(now)
            return
        # Takeover rights grow only while the chain is stuck: no commit AND
        # work waiting. A steadily-committing primary never has competition
        # (old pool entries are just queueing), yet a cut-off group still
        # makes progress once its leader goes quiet for a full timeout.
        oldest = min(self.pool_since.get(txid, now) for txid in self.pool)
        stall = now - max(self.last_commit_tick, oldest)
        eligible = eligible_proposers(self.config, self.height(), stall)
        if self.id not in eligible:
            self.mining = None
            return
        if self.config.mode == "pow":
            self._drive_pow(now)
        elif self.config.mode == "poa":
            self._propose_poa(now)
        else:
            self._drive_vote(now)

    def _drive_heartbeat(self, now: int) -> None:
        """Empty pool: the scheduled primary still seals an empty block
        every block_interval_ticks, so followers can tell a quiet chain
        from a dead one. Only the primary beats (an empty pool is not a
        stall, so no takeover rights accrue) and pow skips entirely --
        grinding hashes to say nothing isn't minimal complexity.
        """
        if not self.heartbeats_on or self.config.mode == "pow":
            return
        if self.proposal is not None:
            return  # an earlier heartbeat is still collecting votes
        order = self.config.order
        if self.id != order[self.height() % len(order)]:
            return
        if now - self.last_commit_tick < self.config.block_interval_ticks:
            return
        block = seal_block(LedgerBlock(
            index=self.height(), prev_hash=self.head_hash(), tx_list=(),
            proposer=self.id, now=now), self.chain.hash_algo())
        if self.config.mode == "poa":
            block = block.with_proof(
                self.authority.poa_proof(self.id, block.block_hash))
            self._commit(block, now)
            return
        own = make_vote(self.keyring, self.authority.node_addr(self.id),
                        block.block_hash, self.id, True)
        if self.config.threshold.required(len(order)) <= 1:
            self._commit(block.with_proof(self.authority.vote_proof([own])),
                         now)
            return
        self.proposal = PendingProposal(block, {self.id: own}, now)
        self.network.broadcast(self.id, "BlockProposal",
                               {"block": block.to_dict()}, now)

    def _build_candidate(self, now: int) -> LedgerBlock | None:
        """Fold the pool through the gatekeeper; flush hard rejections."""
        scratch = self.state.copy()
        scratch.tick_of_head = now
        accepted: list[Transaction] = []
        for tx in sorted(self.pool.values(), key=_tx_sort_key):
            if tx.nonce <= scratch.nonces.get(tx.sender, 0):
                self._reject_tx(tx, STALE_NONCE, now)
                continue
            decision = self.rules.validate(scratch, self.topo, tx, now)
            if not decision.accepted:
                self._reject_tx(tx, decision.reason, now)
                continue
            self.rules.apply(scratch, self.topo, tx)
            scratch.nonces[tx.sender] = tx.nonce
            accepted.append(tx)
        if not accepted:
            return None
        block = LedgerBlock(
            index=self.height(),
            prev_hash=self.head_hash(),
            tx_list=tuple(accepted),
            proposer=self.id,
            now=now,
        )
        return seal_block(block, self.chain.hash_algo())

    def _reject_tx(self, tx: Transaction, reason: str, now: int) -> None:
        self.pool.pop(tx.txid, None)
        self.pool_since.pop(tx.txid, None)
        self.statuses[tx.txid] = ("rejected", reason)
        self.emit(now, "TxRejected", node=self.id, txid=tx.txid,
                  tx_kind=tx.kind, sender=tx.sender, reason=reason)
        if (tx.txid in self.reproposed and tx.kind == "Reserve"
                and reason == CONFLICT and tx.txid not in self.alarmed):
            self.alarmed.add(tx.txid)
            self._raise_safety_alarm(tx, now)

    def _raise_safety_alarm(self, tx: Transaction, now: int) -> None:
        """A reservation that was once committed lost its branch and can no
        longer be re-committed: report the pair that now collides."""
        p = tx.payload
        clash = None
        for res in self.state.reservations_on(p["element"]):
            if (res.window.start < p["window_end"]
                    and p["window_start"] < res.window.end):
                clash = res
                break
        self.emit(now, "SafetyAlarm", node=self.id, txid=tx.txid,
                  train=p["train"], element=p["element"],
                  window_start=p["window_start"], window_end=p["window_end"],
                  conflicting=(None if clash is None else {
                      "train": clash.train,
                      "window_start": clash.window.start,
                      "window_end": clash.window.end,
                  }))

    # --- consensus drivers ----------------------------------------------------

    def _propose_poa(self, now: int) -> None:
        block = self._build_candidate(now)
        if block is None:
            return
        block = block.with_proof(self.authority.poa_proof(self.id,
                                                          block.block_hash))
        self._commit(block, now)

    def _drive_pow(self, now: int) -> None:
        if self.mining is not None and (
                self.mining.block.prev_hash != self.head_hash()):
            self.mining = None
        if self.mining is None:
            block = self._build_candidate(now)
            if block is None:
                return
            self.mining = MiningJob(block)
        job = self.mining
        nonce = mine_pow(job.block.block_hash, self.config.difficulty_bits,
                         self.chain.hash_algo(), job.next_nonce,
                         POW_BUDGET_PER_TICK)
        if nonce is None:
            job.next_nonce += POW_BUDGET_PER_TICK
            return
        block = job.block.with_proof(self.authority.pow_proof(nonce))
        self.mining = None
        self._commit(block, now)

    def _drive_vote(self, now: int) -> None:
        if self.proposal is not None:
            if self.proposal.block.prev_hash != self.head_hash() or (
                    now - self.proposal.started
                    > self.config.proposer_timeout_ticks):
                self.proposal = None
            else:
                return  # still collecting votes
        block = self._build_candidate(now)
        if block is None:
            return
        own = make_vote(self.keyring, self.authority.node_addr(self.id),
                        block.block_hash, self.id, True)
        required = self.config.threshold.required(len(self.config.order))
        if required <= 1:
            self._commit(block.with_proof(self.authority.vote_proof([own])),
                         now)
            return
        self.proposal = PendingProposal(block, {self.id: own}, now)
        self.network.broadcast(self.id, "BlockProposal",
                               {"block": block.to_dict()}, now)

    def _check_proposal_votes(self, now: int) -> None:
        prop = self.proposal
        if prop is None:
            return
        n = len(self.config.order)
        required = self.config.threshold.required(n)
        yes = sum(1 for v in prop.votes.values() if v.accept)
        no = len(prop.votes) - yes
        verdict = evaluate_votes(yes, no, n, required)
        if verdict == "committed":
            accepted = [v for v in prop.votes.values() if v.accept]
            block = prop.block.with_proof(self.authority.vote_proof(accepted))
            self.proposal = None
            self._commit(block, now)
        elif verdict == "rejected":
            self.proposal = None

    # --- message handling -----------------------------------------------------

    def on_message(self, msg: Message, now: int) -> None:
        body = msg.body
        if msg.kind == "TxGossip":
            try:
                tx = Transaction.from_dict(body["tx"])
            except (KeyError, TypeError):
                return
            self.submit_tx(tx, now, gossip=False)
        elif msg.kind == "BlockProposal":
            self._on_proposal(body, msg.src, now)
        elif msg.kind == "BlockVote":
            self._on_vote(body, now)
        elif msg.kind == "BlockCommit":
            self._on_commit_msg(body, msg.src, now)
        elif msg.kind == "HeadAnnounce":
            self._on_head_announce(body, msg.src, now)
        elif msg.kind == "ChainRequest":
            blocks = [b.to_dict() for b in self.chain.blocks]
            self.network.send(self.id, msg.src, "ChainResponse",
                              {"blocks": blocks}, now)
        elif msg.kind == "ChainResponse":
            self._on_chain_response(body, now)

    def _on_proposal(self, body: dict, src: str, now: int) -> None:
        if self.config.mode != "vote":
            return
        try:
            block = LedgerBlock.from_dict(body["block"])
        except (KeyError, TypeError, RailchainError):
            return
        accept = self._proposal_acceptable(block, now)
        if accept and self.proposal is not None and (
                self.proposal.block.block_hash != block.block_hash):
            accept = False  # never endorse a competitor to my own proposal
        vote = make_vote(self.keyring, self.authority.node_addr(self.id),
                         block.block_hash, self.id, accept)
        self.network.send(self.id, src, "BlockVote",
                          {"vote": vote.to_dict()}, now)

    def _proposal_acceptable(self, block: LedgerBlock, now: int) -> bool:
        if block.prev_hash != self.head_hash():
            return False
        if block.index != self.height():
            return False
        if block.block_hash != hash_hex(block.hashing_bytes(),
                                        self.chain.hash_algo()):
            return False
        if block.proposer not in self.config.order:
            return False
        scratch = self.state.copy()
        scratch.tick_of_head = block.now
        for tx in block.tx_list:
            if self._ingress_check_replay(tx, scratch) is not None:
                return False
            decision = self.rules.validate(scratch, self.topo, tx, block.now)
            if not decision.accepted:
                return False
            self.rules.apply(scratch, self.topo, tx)
            scratch.nonces[tx.sender] = tx.nonce
        return True

    def _ingress_check_replay(self, tx: Transaction,
                              scratch: LedgerState) -> str | None:
        if tx.nonce <= scratch.nonces.get(tx.sender, 0):
            return STALE_NONCE
        pubkey_hex = self._keys.get(tx.sender)
        if pubkey_hex is None:
            return UNKNOWN_SENDER
        algo = self.chain.hash_algo()
        if tx.txid != hash_hex(tx.signing_bytes(), algo):
            return MALFORMED
        try:
            if not self.keyring.verify(bytes.fromhex(pubkey_hex),
                                       tx.signing_bytes(),
                                       bytes.fromhex(tx.signature)):
                return BAD_SIGNATURE
        except ValueError:
            return MALFORMED
        return None

    def _on_vote(self, body: dict, now: int) -> None:
        if self.proposal is None:
            return
        try:
            vote = Vote.from_dict(body["vote"])
        except (KeyError, TypeError):
            return
        if vote.block_hash != self.proposal.block.block_hash:
            return
        if vote.voter not in self.config.order or vote.voter in self.proposal.votes:
            return
        pubkey = self.authority.node_pubkey(vote.voter)
        if pubkey is None:
            return
        try:
            sig = bytes.fromhex(vote.signature)
        except ValueError:
            return
        if not self.keyring.verify(
                pubkey, vote_signing_bytes(vote.block_hash, vote.voter,
                                           vote.accept), sig):
            return
        self.proposal.votes[vote.voter] = vote
        self._check_proposal_votes(now)

    def _on_commit_msg(self, body: dict, src: str, now: int) -> None:
        try:
            block = LedgerBlock.from_dict(body["block"])
        except (KeyError, TypeError, RailchainError):
            return
        self.handle_block(block, src, now)

    def _on_head_announce(self, body: dict, src: str, now: int) -> None:
        their_hash = body.get("head_hash")
        their_height = body.get("height")
        if not isinstance(their_hash, str) or not isinstance(their_height, int):
            return
        if their_hash == self.head_hash():
            return
        if better_head(self.height(), self.head_hash(),
                       their_height, their_hash):
            self.network.send(self.id, src, "ChainRequest",
                              {"from_index": 0}, now)

    def _on_chain_response(self, body: dict, now: int) -> None:
        raw = body.get("blocks")
        if not isinstance(raw, list) or not raw:
            return
        try:
            blocks = tuple(LedgerBlock.from_dict(b) for b in raw)
        except (KeyError, TypeError, RailchainError):
            return
        self.consider_chain(Chain(blocks), now)

    # --- block and fork handling ---------------------------------------------

    def handle_block(self, block: LedgerBlock, src: str, now: int) -> None:
        if block.block_hash in self.chain_index:
            return
        if block.block_hash in self.blockstore and (
                block.prev_hash != self.head_hash()):
            return
        self.blockstore[block.block_hash] = block
        if block.prev_hash == self.head_hash() and block.index == self.height():
            if self._block_valid_here(block):
                self._commit(block, now, rebroadcast=False)
            return
        candidate = self._assemble_branch(block)
        if candidate is None:
            self.network.send(self.id, src, "ChainRequest",
                              {"from_index": 0}, now)
            return
        self.consider_chain(candidate, now)

    def _assemble_branch(self, tip: LedgerBlock) -> Chain | None:
        """Walk prev links through the blockstore back to my own chain."""
        suffix = [tip]
        cur = tip
        while True:
            if cur.prev_hash == ZERO_HASH:
                if cur.index != 0:
                    return None
                return Chain(tuple(reversed(suffix)))
            at = self.chain_index.get(cur.prev_hash)
            if at is not None:
                prefix = self.chain.blocks[:at + 1]
                return Chain(prefix + tuple(reversed(suffix)))
            cur = self.blockstore.get(cur.prev_hash)
            if cur is None:
                return None
            suffix.append(cur)

    def _block_valid_here(self, block: LedgerBlock) -> bool:
        algo = self.chain.hash_algo()
        if block.block_hash != hash_hex(block.hashing_bytes(), algo):
            return False
        if not self.authority.verify(block):
            return False
        scratch = self.state.copy()
        scratch.tick_of_head = block.now
        for tx in block.tx_list:
            if self._ingress_check_replay(tx, scratch) is not None:
                return False
            decision = self.rules.validate(scratch, self.topo, tx, block.now)
            if not decision.accepted:
                return False
            self.rules.apply(scratch, self.topo, tx)
            scratch.nonces[tx.sender] = tx.nonce
        return True

    def consider_chain(self, candidate: Chain, now: int) -> None:
        if not candidate.blocks:
            return
        if candidate.blocks[0].block_hash != self.chain.blocks[0].block_hash:
            return  # different world: wrong genesis
        if not better_head(self.height(), self.head_hash(),
                           len(candidate), candidate.head_hash):
            return
        # Catch-up fast path: the candidate ends in my own head, so only the
        # new suffix needs checking — a full re-derivation of the shared
        # prefix would make every sync quadratic in chain length.
        mine = self.height()
        if (len(candidate) > mine
                and candidate.blocks[mine - 1].block_hash == self.head_hash()):
            for block in candidate.blocks[mine:]:
                if not self._block_valid_here(block):
                    return
                self._commit(block, now, rebroadcast=False)
            return
        if verify_chain(candidate, self.keyring, self.authority.verify) is not None:
            return
        try:
            new_state = derive_state(candidate, self.topo, self.rules)
        except (RailchainError, KeyError, ValueError):
            return
        self._reorg_to(candidate, new_state, now)

    def _reorg_to(self, candidate: Chain, new_state: LedgerState,
                  now: int) -> None:
        old = self.chain
        common = 0
        limit = min(len(old), len(candidate))
        while (common < limit and old.blocks[common].block_hash
               == candidate.blocks[common].block_hash):
            common += 1
        dropped_blocks = old.blocks[common:]
        new_txids = {tx.txid for b in candidate.blocks for tx in b.tx_list}
        dropped = [tx for b in dropped_blocks for tx in b.tx_list
                   if tx.txid not in new_txids]

        old_head, old_len = old.head_hash, len(old)
        self.chain = candidate
        self.state = new_state
        self.chain_index = {b.block_hash: b.index for b in candidate.blocks}
        for b in candidate.blocks:
            self.blockstore[b.block_hash] = b
        self.last_commit_tick = now
        self.mining = None
        self.proposal = None

        for b in candidate.blocks:
            for tx in b.tx_list:
                self.statuses[tx.txid] = ("committed", b.index)
                self.pool.pop(tx.txid, None)
                self.pool_since.pop(tx.txid, None)
        reproposed = []
        for tx in dropped:
            if tx.nonce <= self.state.nonces.get(tx.sender, 0):
                self._reject_tx(tx, STALE_NONCE, now)
                continue
            self.pool[tx.txid] = tx
            self.pool_since[tx.txid] = now
            self.statuses[tx.txid] = ("pending", None)
            self.reproposed.add(tx.txid)
            reproposed.append(tx.txid)
        for b in candidate.blocks[common:]:
            self.emit(now, "BlockCommitted", node=self.id, index=b.index,
                      block_hash=b.block_hash, n_tx=len(b.tx_list),
                      proposer=b.proposer)
        if common < old_len:
            # Blocks were actually discarded: that is a fork, not a catch-up.
            self.emit(now, "ForkReport", node=self.id,
                      common_prefix_index=common - 1,
                      old_head=old_head, old_height=old_len,
                      new_head=self.head_hash(), new_height=self.height(),
                      dropped_txids=sorted(tx.txid for tx in dropped),
                      reproposed_txids=sorted(reproposed))
        if reproposed:
            for txid in reproposed:
                self.network.broadcast(self.id, "TxGossip",
                                       {"tx": self.pool[txid].to_dict()}, now)

    def _commit(self, block: LedgerBlock, now: int,
                rebroadcast: bool = True) -> None:
        try:
            self.chain = append_block(self.chain, block, self.authority.verify)
        except RailchainError:
            return
        self.state.tick_of_head = block.now
        for tx in block.tx_list:
            self.rules.apply(self.state, self.topo, tx)
            self.state.nonces[tx.sender] = tx.nonce
            self.statuses[tx.txid] = ("committed", block.index)
            self.pool.pop(tx.txid, None)
            self.pool_since.pop(tx.txid, None)
        self.chain_index[block.block_hash] = block.index
        self.blockstore[block.block_hash] = block
        self.last_commit_tick = now
        self.mining = None
        self.proposal = None
        self.emit(now, "BlockCommitted", node=self.id, index=block.index,
                  block_hash=block.block_hash, n_tx=len(block.tx_list),
                  proposer=block.proposer)
        if rebroadcast:
            self.network.broadcast(self.id, "BlockCommit",
                                   {"block": block.to_dict()}, now)
