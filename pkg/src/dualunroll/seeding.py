"""Named, independent random streams derived from a single root seed.

Every component (data generation, parameter init, training noise, multiplier
sampling, evaluation) pulls from its own stream so that re-running one stage
reproduces it exactly regardless of what the other stages consumed.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch

_MOD = 2**63 - 1


def stream_seed(root_seed: int, name: str) -> int:
    """Derive a stable integer seed for the stream `name`."""
    digest = hashlib.sha256(f"{int(root_seed)}/{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % _MOD


def numpy_rng(root_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(root_seed, name))


def torch_generator(root_seed: int, name: str) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(stream_seed(root_seed, name))
    return gen


def spawn_seed(gen: torch.Generator) -> int:
    """Draw a child seed from a torch generator (for per-query sub-streams)."""
    return int(torch.randint(0, _MOD, (1,), generator=gen).item())
