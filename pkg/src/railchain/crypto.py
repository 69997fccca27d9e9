"""Canonical serialization, hashing, wallets and signature schemes.

Canonical bytes are minified JSON with keys sorted at every level. Every
hash and signature in the system is computed over these bytes, so two
structurally equal values always serialize identically.
"""

from __future__ import annotations

import hashlib
import hmac as _hmac
import json
from typing import Any

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import ConfigError

HASH_ALGOS = {"sha256": hashlib.sha256, "sha3_256": hashlib.sha3_256}

DEFAULT_HASH_ALGO = "sha256"
ZERO_HASH = "0" * 64


def canonical_json(value: Any) -> bytes:
    """UTF-8 bytes of `value` as minified JSON with sorted keys."""
    return json.dumps(
        value, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def hash_hex(data: bytes, algo: str = DEFAULT_HASH_ALGO) -> str:
    try:
        h = HASH_ALGOS[algo]
    except KeyError:
        raise ConfigError(f"unknown hash algorithm: {algo!r}") from None
    return h(data).hexdigest()


def wallet_address(pubkey: bytes, algo: str = DEFAULT_HASH_ALGO) -> str:
    """Wallet address: hash of the public key truncated to 20 bytes, hex."""
    return HASH_ALGOS[algo](pubkey).digest()[:20].hex()


def is_wallet_address(s: str) -> bool:
    return len(s) == 40 and all(c in "0123456789abcdef" for c in s)


class TestHmacScheme:
    """Deterministic keyed-hash stand-in for a real signature scheme.

    The "public key" is a hash of the secret; verification requires the
    keyring (the simulator holds all secrets in one process). Not a
    security boundary, only a stable byte format for tests.
    """

    name = "test-hmac"

    def derive_pubkey(self, secret: str) -> bytes:
        return hashlib.sha256(b"railchain-hmac-pub:" + secret.encode()).digest()

    def sign(self, secret: str, message: bytes) -> bytes:
        return _hmac.new(secret.encode(), message, hashlib.sha256).digest()

    def verify(self, pubkey: bytes, message: bytes, signature: bytes,
               keyring: "Keyring | None" = None) -> bool:
        if keyring is None:
            return False
        secret = keyring.secret_for_pubkey(pubkey)
        if secret is None:
            return False
        return _hmac.compare_digest(self.sign(secret, message), signature)


class Ed25519Scheme:
    """Ed25519 signatures with keys derived deterministically from secrets."""

    name = "ed25519"

    def _private(self, secret: str) -> Ed25519PrivateKey:
        seed = hashlib.sha256(b"railchain-ed25519:" + secret.encode()).digest()
        return Ed25519PrivateKey.from_private_bytes(seed)

    def derive_pubkey(self, secret: str) -> bytes:
        return self._private(secret).public_key().public_bytes_raw()

    def sign(self, secret: str, message: bytes) -> bytes:
        return self._private(secret).sign(message)

    def verify(self, pubkey: bytes, message: bytes, signature: bytes,
               keyring: "Keyring | None" = None) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(pubkey).verify(signature, message)
            return True
        except (InvalidSignature, ValueError):
            return False


SIG_SCHEMES = {s.name: s for s in (TestHmacScheme(), Ed25519Scheme())}


def sig_scheme(name: str):
    try:
        return SIG_SCHEMES[name]
    except KeyError:
        raise ConfigError(f"unknown signature scheme: {name!r}") from None


class Keyring:
    """Maps secrets to derived keys and wallet addresses for one scheme."""

    def __init__(self, scheme_name: str, hash_algo: str = DEFAULT_HASH_ALGO):
        self.scheme = sig_scheme(scheme_name)
        self.hash_algo = hash_algo
        self._secret_by_addr: dict[str, str] = {}
        self._secret_by_pubkey: dict[bytes, str] = {}

    def register(self, secret: str) -> str:
        """Register a secret; returns the derived wallet address."""
        pubkey = self.scheme.derive_pubkey(secret)
        addr = wallet_address(pubkey, self.hash_algo)
        self._secret_by_addr[addr] = secret
        self._secret_by_pubkey[pubkey] = secret
        return addr

    def address_of(self, secret: str) -> str:
        return wallet_address(self.scheme.derive_pubkey(secret), self.hash_algo)

    def pubkey_of(self, secret: str) -> bytes:
        return self.scheme.derive_pubkey(secret)

    def secret_for(self, addr: str) -> str | None:
        return self._secret_by_addr.get(addr)

    def secret_for_pubkey(self, pubkey: bytes) -> str | None:
        return self._secret_by_pubkey.get(pubkey)

    def sign(self, addr: str, message: bytes) -> bytes:
        secret = self._secret_by_addr.get(addr)
        if secret is None:
            raise KeyError(f"no key registered for wallet {addr}")
        return self.scheme.sign(secret, message)

    def verify(self, pubkey: bytes, message: bytes, signature: bytes) -> bool:
        return self.scheme.verify(pubkey, message, signature, keyring=self)


def convention_secret(kind: str, name: str) -> str:
    """Well-known secret for simulator-managed identities.

    kind is one of "train", "owner", "node"; chains produced with these
    conventions can be re-verified offline by rebuilding the keyring from
    the genesis registries alone.
    """
    return f"{kind}:{name}"
