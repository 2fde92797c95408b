"""Stream packing: fill fixed token budgets from a stream of sample lengths.

The packer is greedy best-fit with a bounded lookahead buffer: items that do
not fit the open batch wait in the buffer (up to ``buffer_size``); whenever
the open batch has room, the largest buffered item that fits goes in first.
A full buffer forces the open batch out, and the next batch is seeded with
the largest pending item (big rocks first). After the stream ends the buffer
drains in decreasing order. Every item lands in exactly one batch; an item
larger than the budget is rejected at ingestion.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, List, Optional, Sequence, Tuple, Union


class CapacityError(ValueError):
    """An item cannot fit any batch because it exceeds the budget."""


Item = Union[int, Tuple[int, Any]]


def _norm(item: Item) -> Tuple[int, Any]:
    if isinstance(item, tuple):
        length, payload = item
    else:
        length, payload = item, item
    length = int(length)
    if length <= 0:
        raise ValueError(f"sample length must be positive, got {length}")
    return length, payload


@dataclass(frozen=True)
class PackedBatch:
    """One emitted batch: per-sample lengths plus their payloads."""

    lengths: Tuple[int, ...]
    payloads: Tuple[Any, ...]
    budget: int

    @property
    def total(self) -> int:
        return sum(self.lengths)

    @property
    def fill(self) -> float:
        return self.total / self.budget


class StreamPacker:
    """Packs a stream of (length, payload) items into budgeted batches."""

    def __init__(self, budget: int, buffer_size: int = 32) -> None:
        if budget < 1 or buffer_size < 1:
            raise ValueError("budget and buffer_size must be positive")
        self.budget = budget
        self.buffer_size = buffer_size

    def pack(self, source: Iterable[Item]) -> Iterator[PackedBatch]:
        stream = iter(source)
        buffer: List[Tuple[int, Any]] = []
        batch: List[Tuple[int, Any]] = []
        room = self.budget

        def emit() -> PackedBatch:
            nonlocal batch, room
            out = PackedBatch(
                lengths=tuple(l for l, _ in batch),
                payloads=tuple(p for _, p in batch),
                budget=self.budget,
            )
            batch = []
            room = self.budget
            return out

        def best_buffered() -> Optional[Tuple[int, Any]]:
            fitting = [it for it in buffer if it[0] <= room]
            if not fitting:
                return None
            pick = max(fitting, key=lambda it: it[0])
            buffer.remove(pick)
            return pick

        while True:
            pick = best_buffered()
            if pick is not None:
                batch.append(pick)
                room -= pick[0]
                continue
            drawn = next(stream, None)
            if drawn is None:
                break
            drawn = _norm(drawn)
            if drawn[0] > self.budget:
                raise CapacityError(
                    f"sample of length {drawn[0]} exceeds budget {self.budget}")
            if drawn[0] <= room:
                batch.append(drawn)
                room -= drawn[0]
            elif len(buffer) < self.buffer_size:
                buffer.append(drawn)
            else:
                # Buffer full: flush the open batch and seed the next one
                # with the largest pending item.
                if batch:
                    yield emit()
                pending = buffer + [drawn]
                seed = max(pending, key=lambda it: it[0])
                pending.remove(seed)
                buffer[:] = pending
                batch.append(seed)
                room -= seed[0]

        if batch:
            yield emit()
        # Drain leftovers, big rocks first, best-fit within each batch.
        buffer.sort(key=lambda it: -it[0])
        while buffer:
            room = self.budget
            i = 0
            while i < len(buffer):
                if buffer[i][0] <= room:
                    item = buffer.pop(i)
                    batch.append(item)
                    room -= item[0]
                else:
                    i += 1
            yield emit()


def weighted_merge(sources: Sequence[Iterable[Item]],
                   weights: Optional[Sequence[float]] = None,
                   seed: int = 0) -> Iterator[Item]:
    """Interleave sources by weighted sampling; exhausted sources drop out."""
    iters = [iter(s) for s in sources]
    w = [1.0] * len(iters) if weights is None else [float(x) for x in weights]
    if len(w) != len(iters):
        raise ValueError("one weight per source required")
    if any(x <= 0 for x in w):
        raise ValueError("source weights must be positive")
    rng = random.Random(seed)
    while iters:
        i = rng.choices(range(len(iters)), weights=w)[0]
        try:
            yield next(iters[i])
        except StopIteration:
            del iters[i], w[i]


def pack_stream(sources: Sequence[Iterable[Item]], budget: int,
                buffer_size: int = 32,
                weights: Optional[Sequence[float]] = None,
                seed: int = 0) -> Iterator[PackedBatch]:
    """Pack a weighted blend of several example streams."""
    merged = weighted_merge(sources, weights, seed)
    return StreamPacker(budget, buffer_size).pack(merged)


def pack_lengths(lengths: Iterable[int], budget: int,
                 buffer_size: int = 32) -> List[PackedBatch]:
    """Convenience wrapper packing bare lengths eagerly."""
    return list(StreamPacker(budget, buffer_size).pack(lengths))


def packing_efficiency(batches: Sequence[PackedBatch]) -> float:
    """Occupied fraction of the total booked budget across batches."""
    if not batches:
        return 0.0
    return sum(b.total for b in batches) / (len(batches) * batches[0].budget)
