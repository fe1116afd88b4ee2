"""Labelled random streams derived from one master seed.

Each consumer asks for a stream by label (e.g. ``"project/PRI"``), so adding
or removing a consumer never shifts another consumer's draws.
"""

import hashlib

import numpy as np


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, label: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, label)))
