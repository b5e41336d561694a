"""Reproducible random substreams for Monte Carlo blocks.

Stream contract (stable across releases):

    tag_key   = little-endian uint64 of BLAKE2b-64(tag as UTF-8)
    substream = numpy.random.Generator(PCG64(SeedSequence(seed, spawn_key=(tag_key, block))))

Trials are cut into blocks of BLOCK_SIZE; block b of a run always draws from
substream b, and per-block results are reduced in block order. Any worker
count therefore produces identical numbers for the same master seed.
"""

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Tuple, TypeVar

import numpy as np

BLOCK_SIZE = 4096
MAX_SEED = 2**64 - 1

T = TypeVar("T")
logger = logging.getLogger(__name__)


def tag_key(tag: str) -> int:
    """Stable 64-bit key for a stream tag"""
    return int.from_bytes(hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest(), "little")


class RandomStreams:
    """Family of independent generators addressed by (seed, tag, block)"""

    def __init__(self, seed: int = 0, tag: str = "root"):
        if not 0 <= int(seed) <= MAX_SEED:
            raise ValueError(f"Seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.tag = tag

    def block(self, index: int) -> np.random.Generator:
        sequence = np.random.SeedSequence(self.seed, spawn_key=(tag_key(self.tag), int(index)))
        return np.random.Generator(np.random.PCG64(sequence))

    def generator(self) -> np.random.Generator:
        return self.block(0)

    def child(self, tag: str) -> "RandomStreams":
        return RandomStreams(self.seed, f"{self.tag}/{tag}")

    def __repr__(self):
        return f"RandomStreams(seed={self.seed}, tag={self.tag!r})"


def split_blocks(total: int, block_size: int = BLOCK_SIZE) -> List[Tuple[int, int]]:
    """(block index, block length) pairs covering total trials"""
    if total < 1:
        raise ValueError(f"Trial count must be >= 1, got {total}")
    return [(i, min(block_size, total - start)) for i, start in enumerate(range(0, total, block_size))]


def run_blocks(fn: Callable[[int, int], T], total: int, workers: int = 1,
               block_size: int = BLOCK_SIZE) -> List[T]:
    """Evaluate fn(block_index, block_len) for every block; results in block order"""
    plan = split_blocks(total, block_size)
    logger.debug(f"Running {len(plan)} blocks of up to {block_size} trials on {workers} worker(s)")
    if workers <= 1 or len(plan) == 1:
        return [fn(index, size) for index, size in plan]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda item: fn(*item), plan))
