import pytest
from hypothesis import given, strategies as st

from augur_sim.crypto import (
    CONTRACT_VERSION, CURVE_ORDER, AddressError, InvalidKeyError, KeyPair, address_of, b58decode, b58encode,
    decode_address, encode_address, hash160, sign, verify,
)

# Well-known secp256k1 vectors: private key 1 is the generator point.
G_COMPRESSED = "0279be667ef9dcbbac55a06295ce870b07029bfcdb2dce28d959f2815b16f81798"


def test_hash160_empty_string():
    assert hash160(b"").hex() == "b472a266d0bd89c13706a4132ccfb16f7c3b9fcb"


def test_generator_address():
    k = KeyPair(1)
    assert k.public_key.hex() == G_COMPRESSED
    assert k.hash160.hex() == "751e76e8199196d454941c45d1b3a323f1433bd6"
    assert k.address == "1BgGZ9tcN4rm9KBzDn7KprQz87SZ26SAMH"


def test_leading_zero_bytes_become_ones():
    assert b58encode(b"\0\0\x01") == "112"
    assert b58decode("112") == b"\0\0\x01"


def test_contract_addresses_start_with_A():
    for i in range(20):
        assert encode_address(hash160(bytes([i])), CONTRACT_VERSION).startswith("A")


def test_decode_rejects_bad_checksum_and_chars():
    a = KeyPair(7).address
    bad = a[:-1] + ("2" if a[-1] != "2" else "3")
    with pytest.raises(AddressError):
        decode_address(bad)
    with pytest.raises(AddressError):
        decode_address(a.replace(a[3], "0"))
    with pytest.raises(AddressError):
        encode_address(b"short")


@given(st.binary(max_size=40))
def test_base58_round_trip(data):
    assert b58decode(b58encode(data)) == data


@given(st.binary(min_size=20, max_size=20), st.integers(0, 255))
def test_address_round_trip(h, version):
    assert decode_address(encode_address(h, version)) == (h, version)


def test_key_range():
    with pytest.raises(InvalidKeyError):
        KeyPair(0)
    with pytest.raises(InvalidKeyError):
        KeyPair(CURVE_ORDER)


def test_seeded_keys_are_stable():
    assert KeyPair.from_seed("x").private_key == KeyPair.from_seed(b"x").private_key
    assert KeyPair.from_seed("x") != KeyPair.from_seed("y")


def test_signatures_deterministic_low_s_and_verifiable():
    k = KeyPair.from_seed("signer")
    sig = sign(b"hello", k)
    assert sig == sign(b"hello", k)
    assert len(sig) == 64
    assert int.from_bytes(sig[32:], "big") <= CURVE_ORDER // 2
    assert verify(b"hello", sig, k.public_key)
    assert address_of(k.public_key) == k.address


def test_verify_rejects_tampering():
    k = KeyPair.from_seed("signer")
    other = KeyPair.from_seed("other")
    sig = sign(b"hello", k)
    assert not verify(b"hellp", sig, k.public_key)
    assert not verify(b"hello", sig, other.public_key)
    assert not verify(b"hello", sig[:-1], k.public_key)
    high_s = sig[:32] + (CURVE_ORDER - int.from_bytes(sig[32:], "big")).to_bytes(32, "big")
    assert not verify(b"hello", high_s, k.public_key)
    assert not verify(b"hello", sig, b"\x02" + b"\0" * 32)


@given(st.binary(max_size=64), st.integers(0, 63))
def test_any_flipped_signature_byte_fails(msg, i):
    k = KeyPair.from_seed("prop")
    sig = bytearray(sign(msg, k))
    sig[i] ^= 0x01
    assert not verify(msg, bytes(sig), k.public_key)
