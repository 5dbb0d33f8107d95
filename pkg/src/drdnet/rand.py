"""Seed plumbing: every random draw in the package flows from one user seed.

Child streams are derived by hashing (seed, purpose-label) so the derivation is
stable across platforms and numpy versions, and so independent consumers (sample i,
weight init, batch sampling) never share a stream.
"""

import hashlib

import numpy as np


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed: int, label: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, label)))


def rng_state(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    if state["bit_generator"] != "PCG64":
        raise ValueError("only PCG64 generators are checkpointable")
    return state


def restore_rng(state: dict) -> np.random.Generator:
    gen = np.random.Generator(np.random.PCG64())
    gen.bit_generator.state = state
    return gen
