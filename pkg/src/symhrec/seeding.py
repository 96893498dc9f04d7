"""Deterministic sub-seed derivation: every random stream in a run hangs
off one root seed through stable string hashing."""

import hashlib


def derive_seed(seed: int, purpose: str) -> int:
    digest = hashlib.sha256(f"{seed}:{purpose}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little")
