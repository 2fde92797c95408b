"""Attention masks for the two-stream training layout and for decoding.

A training sequence concatenates four segments:

    vis | query | ntp | blk

``vis``, ``query`` and ``ntp`` attend causally among themselves and never
see ``blk``. The ``blk`` segment is organized in fixed-size blocks: a blk
position sees the whole prompt, every *earlier* blk block in full, and its
own block bidirectionally — never the ``ntp`` segment and never later
blocks. With an empty blk segment the mask degenerates to plain causal.

Masks are dense boolean matrices, ``mask[i, j] == True`` meaning query row
``i`` may attend to key column ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class SequenceLayout:
    """Segment lengths of one training sequence.

    ``ntp_len == blk_len`` always (two views of the same answer stream);
    both may be zero for prompt-only sequences. ``block_size`` is the blk
    grouping and must divide ``blk_len``.
    """

    vis_len: int
    q_len: int
    ntp_len: int
    blk_len: int
    block_size: int = 6

    def __post_init__(self) -> None:
        if min(self.vis_len, self.q_len, self.ntp_len, self.blk_len) < 0:
            raise ValueError("segment lengths must be non-negative")
        if self.ntp_len != self.blk_len:
            raise ValueError(
                f"ntp/blk are two views of one stream: {self.ntp_len} != {self.blk_len}")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.blk_len % self.block_size:
            raise ValueError(
                f"blk_len {self.blk_len} not a multiple of block_size {self.block_size}")

    @property
    def ctx_len(self) -> int:
        return self.vis_len + self.q_len

    @property
    def ntp_start(self) -> int:
        return self.ctx_len

    @property
    def blk_start(self) -> int:
        return self.ctx_len + self.ntp_len

    @property
    def total(self) -> int:
        return self.ctx_len + self.ntp_len + self.blk_len

    @property
    def n_blocks(self) -> int:
        return self.blk_len // self.block_size

    def segment_of(self, i: int) -> str:
        if not (0 <= i < self.total):
            raise IndexError(i)
        if i < self.vis_len:
            return "vis"
        if i < self.ctx_len:
            return "q"
        if i < self.blk_start:
            return "ntp"
        return "blk"


def build_mask_segments(vis_len: int, q_len: int, ntp_len: int, blk_len: int,
                        block_size: int = 6) -> np.ndarray:
    """Mask over raw segment lengths, without the two-view length tie.

    The training path always goes through a SequenceLayout (which pins
    ntp_len == blk_len); this entry point exists for mask inspection,
    where any segment geometry is fair game.
    """
    if min(vis_len, q_len, ntp_len, blk_len) < 0 or block_size < 1:
        raise ValueError("segment lengths must be non-negative")
    if blk_len % block_size:
        raise ValueError(
            f"blk_len {blk_len} not a multiple of block_size {block_size}")
    ctx = vis_len + q_len
    bs = ctx + ntp_len
    t = bs + blk_len
    mask = np.zeros((t, t), dtype=bool)

    # vis+q+ntp: causal triangle, confined to the first bs columns.
    mask[:bs, :bs] = np.tril(np.ones((bs, bs), dtype=bool))

    # blk blocks: prompt + earlier blocks + own block (bidirectional).
    for b in range(blk_len // block_size):
        s = bs + b * block_size
        e = s + block_size
        mask[s:e, :ctx] = True
        mask[s:e, bs:s] = True
        mask[s:e, s:e] = True
    return mask


def build_training_mask(layout: SequenceLayout) -> np.ndarray:
    """Dense [T, T] boolean mask for one (unpacked) training sequence."""
    return build_mask_segments(layout.vis_len, layout.q_len, layout.ntp_len,
                               layout.blk_len, layout.block_size)


def build_packed_training_mask(layouts: Sequence[SequenceLayout]) -> np.ndarray:
    """Block-diagonal mask isolating packed samples from one another."""
    sizes = [lo.total for lo in layouts]
    t = sum(sizes)
    mask = np.zeros((t, t), dtype=bool)
    at = 0
    for lo, size in zip(layouts, sizes):
        mask[at:at + size, at:at + size] = build_training_mask(lo)
        at += size
    return mask


def build_mtp_step_mask(committed_len: int, n_future: int) -> np.ndarray:
    """Decode-step mask: causal prefix plus one fully-connected future block.

    Rows/cols 0..committed_len-1 are the committed stream (causal). The last
    ``n_future`` rows see the whole prefix and each other. With
    ``n_future == 1`` this is exactly a causal mask of size committed_len+1.
    """
    if committed_len < 0 or n_future < 1:
        raise ValueError("committed_len >= 0 and n_future >= 1 required")
    t = committed_len + n_future
    mask = np.tril(np.ones((t, t), dtype=bool))
    mask[committed_len:, :] = True
    return mask


def ascii_mask(mask: np.ndarray, layout: Optional[SequenceLayout] = None,
               labels: Optional[Sequence[str]] = None) -> str:
    """Render a boolean mask as '#'/'.' rows, optionally with segment gutters."""
    if mask.ndim != 2 or mask.shape[0] != mask.shape[1]:
        raise ValueError("mask must be square")
    labels = list(labels) if labels is not None else []
    if layout is not None:
        if layout.total != mask.shape[0]:
            raise ValueError("layout size does not match mask")
        short = {"vis": "v", "q": "q", "ntp": "n", "blk": "b"}
        labels = [short[layout.segment_of(i)] for i in range(layout.total)]
    if labels and len(labels) != mask.shape[0]:
        raise ValueError("one label per position required")
    lines = []
    if labels:
        lines.append("  " + "".join(labels))
    for i, row in enumerate(mask):
        body = "".join("#" if a else "." for a in row)
        prefix = (labels[i] + " ") if labels else ""
        lines.append(prefix + body)
    return "\n".join(lines)
