import json
from dataclasses import replace

import pytest

from railchain.crypto import ZERO_HASH, canonical_json, convention_secret, hash_hex
from railchain.contract import ContractRules
from railchain.errors import (BadHash, BadProof, BrokenLink, ParseError,
                              ReplayError)
from railchain.ledger import (Chain, LedgerBlock, Transaction, append_block,
                              derive_state, load_chain, make_tx, save_chain,
                              seal_block, state_hash, verify_chain,
                              verify_chain_file)


@pytest.fixture()
def ring(keyring):
    """Keyring with the tiny3 identities the ledger fixtures sign with."""
    for train in ("T1", "T2"):
        keyring.register(convention_secret("train", train))
    return keyring


def genesis_payload(ring, topo, balance=100):
    wallets = {t: ring.address_of(convention_secret("train", t))
               for t in ("T1", "T2")}
    keys = {w: ring.pubkey_of(convention_secret("train", t)).hex()
            for t, w in wallets.items()}
    for el in topo.elements.values():
        keys[el.owner_wallet] = ring.pubkey_of(
            convention_secret("owner", el.id)).hex()
    return {
        "allocations": {w: balance for w in wallets.values()},
        "hash_algo": "sha256",
        "keys": keys,
        "occupancy_reporter": "train",
        "topology_hash": topo.content_hash(),
        "trains": wallets,
    }


def genesis_chain(ring, topo) -> Chain:
    block = seal_block(LedgerBlock(index=0, prev_hash=ZERO_HASH, tx_list=(),
                                   proposer="genesis", now=0,
                                   genesis=genesis_payload(ring, topo)))
    return Chain((block,))


def wallet(ring, train: str) -> str:
    return ring.address_of(convention_secret("train", train))


def extend(chain: Chain, txs, now: int) -> Chain:
    block = seal_block(LedgerBlock(index=len(chain), prev_hash=chain.head_hash,
                                   tx_list=tuple(txs), proposer="n1", now=now))
    return append_block(chain, block)


def transfer_chain(ring, topo, n_blocks=6) -> Chain:
    """Genesis plus n_blocks single-Transfer blocks, alternating direction."""
    chain = genesis_chain(ring, topo)
    w1, w2 = wallet(ring, "T1"), wallet(ring, "T2")
    for i in range(n_blocks):
        src, dst = (w1, w2) if i % 2 == 0 else (w2, w1)
        tx = make_tx(ring, src, "Transfer", {"to": dst, "amount": 1},
                     nonce=i // 2 + 1)
        chain = extend(chain, [tx], now=i + 1)
    return chain


# --- transactions ------------------------------------------------------------

def test_make_tx_txid_and_signature(ring):
    w1 = wallet(ring, "T1")
    tx = make_tx(ring, w1, "Transfer", {"to": "x", "amount": 3}, nonce=1)
    assert tx.txid == hash_hex(tx.signing_bytes())
    assert ring.verify(ring.pubkey_of(convention_secret("train", "T1")),
                       tx.signing_bytes(), bytes.fromhex(tx.signature))


def test_signing_bytes_exclude_txid_and_signature(ring):
    w1 = wallet(ring, "T1")
    tx = make_tx(ring, w1, "Transfer", {"to": "x", "amount": 3}, nonce=1)
    assert tx.signing_bytes() == canonical_json({
        "kind": "Transfer", "nonce": 1,
        "payload": {"to": "x", "amount": 3}, "sender": w1})
    # Rebuilding with identical fields gives the identical id.
    again = make_tx(ring, w1, "Transfer", {"amount": 3, "to": "x"}, nonce=1)
    assert again.txid == tx.txid


def test_transaction_from_dict_validation():
    with pytest.raises(ParseError, match="missing"):
        Transaction.from_dict({"kind": "Transfer"})
    with pytest.raises(ParseError, match="unknown transaction kind"):
        Transaction.from_dict({
            "kind": "Mint", "nonce": 1, "payload": {}, "sender": "s",
            "signature": "", "txid": ""})


# --- blocks and chains ---------------------------------------------------------

def test_seal_block_hash_excludes_proof():
    block = seal_block(LedgerBlock(index=1, prev_hash="ab", tx_list=(),
                                   proposer="n1", now=3))
    proofed = block.with_proof({"mode": "poa", "signature": "ff"})
    assert proofed.block_hash == block.block_hash
    assert hash_hex(block.hashing_bytes()) == block.block_hash


def test_block_from_dict_missing_keys():
    with pytest.raises(ParseError, match="block missing"):
        LedgerBlock.from_dict({"index": 0})


def test_empty_chain_head_hash():
    assert Chain().head_hash == ZERO_HASH


def test_append_block_rejects_bad_index(ring, tiny3):
    chain = genesis_chain(ring, tiny3)
    block = seal_block(LedgerBlock(index=2, prev_hash=chain.head_hash,
                                   tx_list=(), proposer="n1", now=1))
    with pytest.raises(BrokenLink, match="expected index 1"):
        append_block(chain, block)


def test_append_block_rejects_broken_link(ring, tiny3):
    chain = genesis_chain(ring, tiny3)
    block = seal_block(LedgerBlock(index=1, prev_hash="0" * 64, tx_list=(),
                                   proposer="n1", now=1))
    with pytest.raises(BrokenLink, match="prev_hash"):
        append_block(chain, block)


def test_append_block_rejects_tampered_hash(ring, tiny3):
    chain = genesis_chain(ring, tiny3)
    block = seal_block(LedgerBlock(index=1, prev_hash=chain.head_hash,
                                   tx_list=(), proposer="n1", now=1))
    with pytest.raises(BadHash):
        append_block(chain, replace(block, now=2))


def test_append_block_rejects_bad_proof(ring, tiny3):
    chain = genesis_chain(ring, tiny3)
    block = seal_block(LedgerBlock(index=1, prev_hash=chain.head_hash,
                                   tx_list=(), proposer="n1", now=1))
    with pytest.raises(BadProof):
        append_block(chain, block, proof_verifier=lambda b: False)


def test_append_never_mutates_input(ring, tiny3):
    chain = genesis_chain(ring, tiny3)
    block = seal_block(LedgerBlock(index=1, prev_hash=chain.head_hash,
                                   tx_list=(), proposer="n1", now=1))
    longer = append_block(chain, block)
    assert len(chain) == 1 and len(longer) == 2


# --- verify_chain ---------------------------------------------------------------

def test_verify_chain_clean(ring, tiny3):
    chain = transfer_chain(ring, tiny3)
    assert verify_chain(chain, ring) is None


def test_verify_chain_reports_tampered_payload(ring, tiny3):
    chain = transfer_chain(ring, tiny3)
    victim = chain.blocks[4]
    forged_tx = replace(victim.tx_list[0],
                        payload={"to": "attacker", "amount": 90})
    tampered = Chain(chain.blocks[:4]
                     + (replace(victim, tx_list=(forged_tx,)),)
                     + chain.blocks[5:])
    assert verify_chain(tampered, ring) == 4


def test_verify_chain_reports_swapped_blocks(ring, tiny3):
    chain = transfer_chain(ring, tiny3)
    b = list(chain.blocks)
    b[3], b[4] = b[4], b[3]
    assert verify_chain(Chain(tuple(b)), ring) == 3


def test_verify_chain_reports_bad_signature(ring, tiny3):
    chain = genesis_chain(ring, tiny3)
    w1 = wallet(ring, "T1")
    tx = make_tx(ring, w1, "Transfer", {"to": "x", "amount": 1}, nonce=1)
    tx = replace(tx, signature="00" * 32)
    chain = extend(chain, [tx], now=1)
    assert verify_chain(chain) is None  # hashes alone still line up
    assert verify_chain(chain, ring) == 1


def test_verify_chain_reports_unknown_sender(ring, tiny3):
    chain = genesis_chain(ring, tiny3)
    stranger = ring.register("train:T9")
    tx = make_tx(ring, stranger, "Transfer", {"to": "x", "amount": 1}, nonce=1)
    chain = extend(chain, [tx], now=1)
    assert verify_chain(chain, ring) == 1


def test_verify_chain_genesis_without_payload():
    bare = seal_block(LedgerBlock(index=0, prev_hash=ZERO_HASH, tx_list=(),
                                  proposer="genesis", now=0))
    assert verify_chain(Chain((bare,))) == 0


# --- derive_state ----------------------------------------------------------------

def test_derive_state_genesis_allocations(ring, tiny3):
    state = derive_state(genesis_chain(ring, tiny3), tiny3,
                         ContractRules(genesis_payload(ring, tiny3)))
    assert state.balances == {wallet(ring, "T1"): 100, wallet(ring, "T2"): 100}
    assert state.reservations == {}
    assert state.nonces == {}


def test_derive_state_folds_reserve(ring, tiny3):
    genesis = genesis_payload(ring, tiny3)
    rules = ContractRules(genesis)
    chain = genesis_chain(ring, tiny3)
    w1 = wallet(ring, "T1")
    fee = 5  # price 1 per tick x window [5, 10)
    tx = make_tx(ring, w1, "Reserve", {
        "train": "T1", "element": "B2", "window_start": 5, "window_end": 10,
        "required_position": None, "fee": fee}, nonce=1)
    chain = extend(chain, [tx], now=1)
    state = derive_state(chain, tiny3, rules)
    owner = tiny3.element("B2").owner_wallet
    assert state.balances[w1] == 100 - fee
    assert state.balances[owner] == fee
    assert ("T1", "B2", 5, 10) in state.reservations
    assert state.nonces[w1] == 1
    assert state.tick_of_head == 1


def test_derive_state_rejects_replayed_nonce(ring, tiny3):
    rules = ContractRules(genesis_payload(ring, tiny3))
    chain = genesis_chain(ring, tiny3)
    w1 = wallet(ring, "T1")
    tx = make_tx(ring, w1, "Transfer", {"to": "x", "amount": 1}, nonce=1)
    chain = extend(chain, [tx], now=1)
    chain = extend(chain, [tx], now=2)
    with pytest.raises(ReplayError, match="nonce"):
        derive_state(chain, tiny3, rules)


def test_derive_state_rejects_rule_breaking_tx(ring, tiny3):
    """A committed transaction that fails the gatekeeper marks the chain
    as corrupt; derive refuses to continue past it."""
    rules = ContractRules(genesis_payload(ring, tiny3))
    chain = genesis_chain(ring, tiny3)
    w1 = wallet(ring, "T1")
    tx = make_tx(ring, w1, "Transfer", {"to": "x", "amount": 10 ** 6}, nonce=1)
    chain = extend(chain, [tx], now=1)
    with pytest.raises(ReplayError, match="rejected on replay"):
        derive_state(chain, tiny3, rules)


def test_derive_state_needs_genesis(ring, tiny3):
    rules = ContractRules(genesis_payload(ring, tiny3))
    with pytest.raises(ReplayError):
        derive_state(Chain(), tiny3, rules)


def test_state_hash_is_order_insensitive(ring, tiny3):
    rules = ContractRules(genesis_payload(ring, tiny3))
    state = derive_state(genesis_chain(ring, tiny3), tiny3, rules)
    h1 = state_hash(state)
    # Rebuild balances in reverse insertion order; canonical form sorts.
    state.balances = dict(reversed(list(state.balances.items())))
    assert state_hash(state) == h1


# --- persistence ------------------------------------------------------------------

def test_save_load_roundtrip(ring, tiny3, tmp_path):
    chain = transfer_chain(ring, tiny3)
    path = tmp_path / "chain.jsonl"
    save_chain(chain, path)
    loaded = load_chain(path)
    assert [b.to_dict() for b in loaded.blocks] == \
        [b.to_dict() for b in chain.blocks]
    # Line index equals block index; every line is minified canonical JSON.
    lines = path.read_bytes().decode().splitlines()
    assert len(lines) == len(chain)
    for i, line in enumerate(lines):
        assert json.loads(line)["index"] == i
        assert canonical_json(json.loads(line)).decode() == line
    save_chain(loaded, tmp_path / "again.jsonl")
    assert (tmp_path / "again.jsonl").read_bytes() == path.read_bytes()


def test_verify_chain_file_clean_and_tampered(ring, tiny3, tmp_path):
    chain = transfer_chain(ring, tiny3)
    path = tmp_path / "chain.jsonl"
    save_chain(chain, path)
    assert verify_chain_file(path, ring) is None

    data = bytearray(path.read_bytes())
    # Flip one byte inside line 3 (offsets: three newlines consumed first).
    offset = 0
    for _ in range(3):
        offset = data.index(b"\n", offset) + 1
    data[offset + 10] ^= 0xFF
    path.write_bytes(bytes(data))
    failing = verify_chain_file(path, ring)
    assert failing is not None and failing <= 3


def test_load_chain_rejects_garbage(tmp_path):
    path = tmp_path / "chain.jsonl"
    path.write_text('{"not": "a block"}\n')
    with pytest.raises(ParseError):
        load_chain(path)
