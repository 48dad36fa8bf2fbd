"""Reproducible counter-based random streams for path ensembles.

Paths are organized in fixed-size blocks.  Every (purpose tag, block index)
pair keys an independent Philox generator, and inside a block draws happen
in a fixed step-major order.  The increment consumed by a given
(seed, tag, path, step) is therefore a pure function of those four values:
ensembles are bit-identical whether blocks are generated serially, in any
order, or on any number of workers, as long as the block size and each
block's lane count are fixed.  Chunked generation must use block-aligned
path offsets; it then reproduces a monolithic call exactly.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

__all__ = ["RngStream", "DEFAULT_BLOCK_SIZE", "map_blocks"]

DEFAULT_BLOCK_SIZE = 16384


def map_blocks(fn, ranges, threads: int = 1) -> None:
    """Run fn(block, lo, hi) over block ranges, optionally on a thread pool.

    Workers write into disjoint, preallocated slices, so results are
    bit-identical for any worker count.
    """
    ranges = list(ranges)
    if threads <= 1 or len(ranges) <= 1:
        for block, lo, hi in ranges:
            fn(block, lo, hi)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, block, lo, hi) for block, lo, hi in ranges]
        for fut in futures:
            fut.result()


@dataclass(frozen=True)
class RngStream:
    seed: int
    block_size: int = DEFAULT_BLOCK_SIZE

    def __post_init__(self):
        if self.block_size < 1:
            raise ValueError("block_size must be positive")

    def generator(self, tag: str, block: int) -> np.random.Generator:
        """Independent generator for one (purpose, block) cell."""
        key = zlib.crc32(tag.encode("utf-8"))
        seq = np.random.SeedSequence(entropy=(int(self.seed) & 0xFFFFFFFFFFFFFFFF, key, int(block)))
        return np.random.Generator(np.random.Philox(seq))

    def block_ranges(self, n_paths: int, path_offset: int = 0):
        """Yield (block_index, lo, hi) covering [path_offset, path_offset + n_paths).

        ``path_offset`` must be block-aligned so chunked generation visits the
        same (block, lane) cells as a single call would.
        """
        if path_offset % self.block_size != 0:
            raise ValueError("path_offset must be a multiple of the block size")
        first = path_offset // self.block_size
        done = 0
        while done < n_paths:
            block = first + done // self.block_size
            take = min(self.block_size, n_paths - done)
            yield block, done, done + take
            done += take
