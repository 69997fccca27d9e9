"""Independent safety checkers. These deliberately do not reuse the
gatekeeper: they re-derive the facts with different code so a contract bug
cannot hide itself. Every checker returns violation dicts; an empty list
means the invariant held.
"""

from __future__ import annotations

import numpy as np

from .ledger import Chain, derive_state, state_hash, verify_chain


def _overlap_violations(element: str, live: dict, block_index: int) -> list[dict]:
    """Pairwise window overlap over one element's live reservations, via a
    vectorised interval sweep (sort by start; any start before the previous
    end is an overlap)."""
    if len(live) < 2:
        return []
    keys = sorted(live)
    starts = np.array([k[2] for k in keys], dtype=np.int64)
    ends = np.array([k[3] for k in keys], dtype=np.int64)
    order = np.argsort(starts, kind="stable")
    starts, ends = starts[order], ends[order]
    clash = np.nonzero(starts[1:] < np.maximum.accumulate(ends)[:-1])[0]
    out = []
    for i in clash:
        a, b = keys[order[i]], keys[order[i + 1]]
        out.append({
            "oracle": "exclusivity",
            "element": element,
            "block_index": block_index,
            "first": {"train": a[0], "window": [a[2], a[3]]},
            "second": {"train": b[0], "window": [b[2], b[3]]},
        })
    return out


def chain_exclusivity_violations(chain: Chain) -> list[dict]:
    """Brute-force re-check that at no block height did two committed
    reservations for the same element overlap in time.

    Replays only the Reserve/Release stream (no gatekeeper), keeps the live
    set per element, and sweeps an element whenever a block touched it.
    """
    live: dict[str, dict] = {}
    violations: list[dict] = []
    for block in chain.blocks:
        touched = set()
        for tx in block.tx_list:
            if tx.kind == "Reserve":
                p = tx.payload
                key = (p["train"], p["element"], p["window_start"],
                       p["window_end"])
                live.setdefault(p["element"], {})[key] = tx.txid
                touched.add(p["element"])
            elif tx.kind == "Release":
                p = tx.payload
                key = (p["train"], p["element"], p["window_start"],
                       p["window_end"])
                live.get(p["element"], {}).pop(key, None)
        for element in sorted(touched):
            violations.extend(
                _overlap_violations(element, live[element], block.index))
    return violations


def money_violations(chain: Chain, balances: dict[str, int]) -> list[dict]:
    """Fees and refunds move money, never create it: the sum over all
    balances must equal the sum of the genesis allocations, and no balance
    may be negative."""
    genesis = chain.blocks[0].genesis or {}
    minted = sum(genesis.get("allocations", {}).values())
    total = sum(balances.values())
    out = []
    if total != minted:
        out.append({"oracle": "money", "minted": minted, "total": total})
    for addr, amount in sorted(balances.items()):
        if amount < 0:
            out.append({"oracle": "money", "negative": addr, "amount": amount})
    return out


def physical_violations(physical: dict[str, str], tick: int) -> list[dict]:
    """One train per element holds by dict shape; a train on two elements
    at once does not."""
    seen: dict[str, str] = {}
    out = []
    for element in sorted(physical):
        train = physical[element]
        if train in seen:
            out.append({"oracle": "physical", "tick": tick, "train": train,
                        "elements": [seen[train], element]})
        seen[train] = element
    return out


def agreement_violations(heads: dict[str, str],
                         state_hashes: dict[str, str]) -> list[dict]:
    out = []
    if len(set(heads.values())) > 1:
        out.append({"oracle": "agreement", "heads": dict(sorted(heads.items()))})
    if len(set(state_hashes.values())) > 1:
        out.append({"oracle": "agreement",
                    "state_hashes": dict(sorted(state_hashes.items()))})
    return out


def replay_violations(chain: Chain, topo, rules, keyring, proof_verifier,
                      reported_state_hash: str) -> list[dict]:
    """Re-verify the whole chain from its own bytes and refold the state;
    the result must match what the node reports."""
    bad = verify_chain(chain, keyring, proof_verifier)
    if bad is not None:
        return [{"oracle": "replay", "failed_block": bad}]
    refolded = derive_state(chain, topo, rules)
    digest = state_hash(refolded, chain.hash_algo())
    if digest != reported_state_hash:
        return [{"oracle": "replay", "expected": digest,
                 "reported": reported_state_hash}]
    return []
