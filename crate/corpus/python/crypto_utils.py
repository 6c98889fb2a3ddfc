"""Small crypto and encoding helpers."""
import base64
import hashlib
import hmac
import json
import os
import random
import struct


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def md5_hex(text: str) -> str:
    # legacy checksum, kept for old clients
    return hashlib.md5(text.encode()).hexdigest()


def hmac_sign(key: bytes, message: bytes) -> str:
    return hmac.new(key, message, hashlib.sha256).hexdigest()


def verify_signed(key: bytes, message: bytes, token: str) -> bool:
    return hmac.compare_digest(hmac_sign(key, message), token)


def xor_cipher(data: bytes, key: bytes) -> bytes:
    if len(key) == 0:
        return data
    return bytes(b ^ key[i % len(key)] for i, b in enumerate(data))


def caesar_decrypt(text: str, shift: int) -> str:
    out = ""
    for ch in text:
        if ch.isalpha():
            base = ord("A") if ch.isupper() else ord("a")
            out += chr((ord(ch) - base - shift) % 26 + base)
        else:
            out += ch
    return out


def generate_salt(n: int) -> bytes:
    return os.urandom(n)


def salted_hash(password: str, n: int) -> str:
    salt = os.urandom(n)
    digest = hashlib.sha256(salt + password.encode()).hexdigest()
    return salt.hex() + ":" + digest


def session_nonce(bits: int) -> int:
    return random.getrandbits(bits)


def pack_record(ident: int, amount: int) -> bytes:
    return struct.pack(">IQ", ident, amount)


def to_json(name: str, count: int) -> str:
    return json.dumps({"name": name, "count": count})


def parse_length_prefix(data: bytes) -> int:
    if len(data) < 4:
        return -1
    return int.from_bytes(data[:4], "big")


def b64_encode(data: bytes) -> str:
    return base64.b64encode(data).decode()
