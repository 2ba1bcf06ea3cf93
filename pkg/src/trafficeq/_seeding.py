"""Labeled seed derivation so every subsystem draws from its own stream."""
import hashlib


def derive_seed(master: int, *labels) -> int:
    key = "/".join([str(int(master))] + [str(x) for x in labels]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1
