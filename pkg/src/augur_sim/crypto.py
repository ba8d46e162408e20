"""Hashes, base-58 addresses and secp256k1 signatures.

Signatures are deterministic ECDSA (RFC 6979 nonces) serialized as the
64-byte compact ``r || s`` form with low-S normalization, so a given key and
message always produce the same bytes.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from Crypto.Hash import RIPEMD160
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .errors import AugurError

# secp256k1 group order
CURVE_ORDER = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141

USER_VERSION = 0x00
# Event, market and pool addresses; version 0x17 encodes with an 'A' prefix.
CONTRACT_VERSION = 0x17

B58_ALPHABET = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"


class AddressError(AugurError):
    code = "bad-address"


class InvalidKeyError(AugurError):
    code = "bad-key"


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def hash256(data: bytes) -> bytes:
    return sha256(sha256(data))


def hash160(data: bytes) -> bytes:
    """RIPEMD160(SHA256(data))."""
    return RIPEMD160.new(sha256(data)).digest()


def b58encode(v: bytes) -> str:
    n = int.from_bytes(v, "big")
    out = []
    while n:
        n, r = divmod(n, 58)
        out.append(B58_ALPHABET[r])
    pad = len(v) - len(v.lstrip(b"\0"))
    return "1" * pad + "".join(reversed(out))


def b58decode(s: str) -> bytes:
    n = 0
    for c in s:
        i = B58_ALPHABET.find(c)
        if i < 0:
            raise AddressError(f"invalid base-58 character {c!r}")
        n = n * 58 + i
    body = n.to_bytes((n.bit_length() + 7) // 8, "big") if n else b""
    pad = len(s) - len(s.lstrip("1"))
    return b"\0" * pad + body


def encode_address(h: bytes, version: int = USER_VERSION) -> str:
    if len(h) != 20:
        raise AddressError(f"digest must be 20 bytes, got {len(h)}")
    if not 0 <= version <= 255:
        raise AddressError("version must be a single byte")
    payload = bytes([version]) + h
    return b58encode(payload + hash256(payload)[:4])


def decode_address(s: str) -> tuple[bytes, int]:
    """Return ``(hash160, version)``; raises :class:`AddressError` on a bad checksum."""
    raw = b58decode(s)
    if len(raw) != 25:
        raise AddressError(f"decoded address has {len(raw)} bytes, expected 25")
    payload, check = raw[:-4], raw[-4:]
    if hash256(payload)[:4] != check:
        raise AddressError("checksum mismatch")
    return payload[1:], payload[0]


def address_of(pubkey: bytes) -> str:
    return encode_address(hash160(pubkey), USER_VERSION)


@dataclass(frozen=True)
class KeyPair:
    private_key: int
    public_key: bytes = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 < self.private_key < CURVE_ORDER:
            raise InvalidKeyError("private key outside the secp256k1 scalar range")
        priv = ec.derive_private_key(self.private_key, ec.SECP256K1())
        pub = priv.public_key().public_bytes(Encoding.X962, PublicFormat.CompressedPoint)
        object.__setattr__(self, "public_key", pub)
        object.__setattr__(self, "_priv", priv)

    @classmethod
    def from_seed(cls, seed: bytes | str) -> "KeyPair":
        """Deterministic key for simulator actors."""
        if isinstance(seed, str):
            seed = seed.encode()
        counter = 0
        while True:
            k = int.from_bytes(sha256(seed + counter.to_bytes(4, "big")), "big")
            if 0 < k < CURVE_ORDER:
                return cls(k)
            counter += 1

    @property
    def hash160(self) -> bytes:
        return hash160(self.public_key)

    @property
    def address(self) -> str:
        return encode_address(self.hash160, USER_VERSION)


def sign(msg: bytes, key: KeyPair) -> bytes:
    der = key._priv.sign(msg, ec.ECDSA(hashes.SHA256(), deterministic_signing=True))
    r, s = decode_dss_signature(der)
    if s > CURVE_ORDER // 2:
        s = CURVE_ORDER - s
    return r.to_bytes(32, "big") + s.to_bytes(32, "big")


def verify(msg: bytes, sig: bytes, public_key: bytes) -> bool:
    if len(sig) != 64:
        return False
    r = int.from_bytes(sig[:32], "big")
    s = int.from_bytes(sig[32:], "big")
    if not (0 < r < CURVE_ORDER and 0 < s <= CURVE_ORDER // 2):
        return False
    try:
        pub = ec.EllipticCurvePublicKey.from_encoded_point(ec.SECP256K1(), public_key)
        pub.verify(encode_dss_signature(r, s), msg, ec.ECDSA(hashes.SHA256()))
    except (InvalidSignature, ValueError):
        return False
    return True
