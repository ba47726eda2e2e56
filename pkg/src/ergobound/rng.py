"""Counter-based, splittable random streams.

Every random draw in the package comes from a :class:`RandomStream`, which is a
(seed, key) pair mapped onto a Philox generator. Streams are split by label, and
Monte-Carlo work is cut into fixed-size batches that each own a sub-stream, so
results depend only on ``(seed, labels, batch_size)`` and never on how many
workers evaluated the batches.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, TypeVar

import numpy as np

DEFAULT_BATCH = 8192

T = TypeVar("T")


def _label_word(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


@dataclass(frozen=True)
class RandomStream:
    """A named position in a tree of independent random streams."""

    seed: int
    key: tuple[int, ...] = ()

    def spawn(self, *labels) -> "RandomStream":
        return RandomStream(self.seed, self.key + tuple(_label_word(l) for l in labels))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        return np.random.Generator(np.random.Philox(ss))

    def batches(self, n: int, batch_size: int = DEFAULT_BATCH) -> Iterator[tuple[int, int, np.random.Generator]]:
        """Yield ``(start, count, generator)`` covering ``n`` items in order."""
        for b, start in enumerate(range(0, n, batch_size)):
            count = min(batch_size, n - start)
            yield start, count, self.spawn("batch", b).generator()


def as_stream(rng) -> RandomStream:
    """Coerce an int seed or an existing stream into a :class:`RandomStream`."""
    if isinstance(rng, RandomStream):
        return rng
    if rng is None:
        return RandomStream(0)
    if isinstance(rng, (int, np.integer)):
        return RandomStream(int(rng))
    raise TypeError(f"expected seed or RandomStream, got {type(rng).__name__}")


def map_batches(
    fn: Callable[[int, int, np.random.Generator], T],
    stream: RandomStream,
    n: int,
    batch_size: int = DEFAULT_BATCH,
    workers: int = 1,
) -> list[T]:
    """Apply ``fn(start, count, gen)`` to every batch; results come back in batch order."""
    jobs = list(stream.batches(n, batch_size))
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


def mean_and_stderr(values: np.ndarray) -> tuple[float, float]:
    """Sample mean and its standard error, reduced pairwise by numpy in fixed order."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n == 0:
        raise ValueError("no samples")
    mean = float(np.mean(values))
    if n == 1:
        return mean, 0.0
    return mean, float(np.std(values, ddof=1) / np.sqrt(n))
