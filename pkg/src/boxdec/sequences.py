"""Joint training streams: next-token view plus block-parallel view.

One answer (a flat block stream) enters the training sequence twice:

    x = vis | query | ntp | blk

``ntp`` is the answer verbatim and is scored with the shifted next-token
loss. ``blk`` is the mask expansion of the same stream: each block keeps its
first token and replaces the rest with [mask]; masked slots are scored
against the tokens they hide, and each block's first slot is scored against
the *next* block's first token, so the parallel stream learns both in-block
reconstruction and block-to-block chaining. The last prompt position carries
the answer's first token as a target shared by both streams; with
block_size 1 the two streams therefore score the identical target multiset.

blk positions reuse the positional ids of their ntp twins, so the parallel
view sits at the same geometry the decoder will use at inference time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np

from .codec import BLOCK_LEN, Block, flatten
from .masks import SequenceLayout
from .vocab import Vocabulary

IGNORE = -1

TAG_NONE = 0
TAG_NTP = 1
TAG_MTP = 2
TAG_BOTH = 3


@dataclass(frozen=True)
class TrainingExample:
    """One assembled sequence with per-position targets and loss routing.

    ``targets[i]`` is a token id or IGNORE. ``loss_tags[i]`` routes the
    position's cross-entropy into the next-token mean, the parallel mean,
    both, or neither.
    """

    tokens: np.ndarray
    targets: np.ndarray
    loss_tags: np.ndarray
    positions: np.ndarray
    layout: SequenceLayout

    def __post_init__(self) -> None:
        n = self.layout.total
        for name in ("tokens", "targets", "loss_tags", "positions"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")

    @property
    def length(self) -> int:
        return self.layout.total


def expand_to_blocks(ntp_tokens: Sequence[int], mask_id: int,
                     block_size: int = BLOCK_LEN
                     ) -> Tuple[np.ndarray, np.ndarray]:
    """Mask-expand a flat stream: keep block openers, hide the rest.

    Returns (blk_tokens, recon_targets); recon targets hold the hidden token
    at masked slots and IGNORE at openers.
    """
    n = len(ntp_tokens)
    if n == 0 or n % block_size:
        raise ValueError(f"stream length {n} not a positive multiple of {block_size}")
    blk = np.full(n, mask_id, dtype=np.int64)
    recon = np.asarray(ntp_tokens, dtype=np.int64).copy()
    openers = np.arange(0, n, block_size)
    blk[openers] = recon[openers]
    recon[openers] = IGNORE
    return blk, recon


AnswerStream = Union[Sequence[int], Iterable[Block]]


def _as_token_list(answer: AnswerStream) -> List[int]:
    answer = list(answer)
    if answer and isinstance(answer[0], Block):
        return flatten(answer)
    return [int(t) for t in answer]


def assemble_training_example(vis_tokens: Sequence[int],
                              q_tokens: Sequence[int],
                              answer: AnswerStream,
                              vocab: Vocabulary,
                              block_size: int = BLOCK_LEN) -> TrainingExample:
    """Build the full two-view sequence for one (scene, query, answer) triple."""
    vis = [int(t) for t in vis_tokens]
    q = [int(t) for t in q_tokens]
    ntp = _as_token_list(answer)
    if not q and not vis:
        raise ValueError("prompt may not be empty")
    n = len(ntp)
    layout = SequenceLayout(vis_len=len(vis), q_len=len(q),
                            ntp_len=n, blk_len=n, block_size=block_size)

    blk, recon = expand_to_blocks(ntp, vocab.mask, block_size)
    tokens = np.concatenate([
        np.asarray(vis + q, dtype=np.int64),
        np.asarray(ntp, dtype=np.int64),
        blk,
    ])

    # blk mirrors the positional ids of its ntp twin.
    ctx = layout.ctx_len
    positions = np.concatenate([
        np.arange(ctx + n, dtype=np.int64),
        np.arange(ctx, ctx + n, dtype=np.int64),
    ])

    targets = np.full(layout.total, IGNORE, dtype=np.int64)
    tags = np.full(layout.total, TAG_NONE, dtype=np.int8)

    # Next-token view: shifted targets inside the ntp segment.
    ns = layout.ntp_start
    if n > 1:
        targets[ns:ns + n - 1] = tokens[ns + 1:ns + n]
        tags[ns:ns + n - 1] = TAG_NTP

    # Shared entry point: the last prompt position predicts the answer's
    # first token and feeds both loss means.
    targets[ctx - 1] = ntp[0]
    tags[ctx - 1] = TAG_BOTH

    # Parallel view: reconstruction at masked slots ...
    bs = layout.blk_start
    masked = recon != IGNORE
    targets[bs:bs + n][masked] = recon[masked]
    tags[bs:bs + n][masked] = TAG_MTP

    # ... and block chaining at openers: each block's first slot predicts
    # the next block's first token; the final opener stays unscored.
    openers = np.arange(0, n, block_size)
    for k in range(len(openers) - 1):
        pos = bs + openers[k]
        targets[pos] = ntp[openers[k + 1]]
        tags[pos] = TAG_MTP

    return TrainingExample(tokens=tokens, targets=targets, loss_tags=tags,
                           positions=positions, layout=layout)


@dataclass(frozen=True)
class PackedExample:
    """Several training examples laid end to end; attention stays per-sample."""

    tokens: np.ndarray
    targets: np.ndarray
    loss_tags: np.ndarray
    positions: np.ndarray
    layouts: Tuple[SequenceLayout, ...]

    @property
    def length(self) -> int:
        return int(self.tokens.shape[0])


def pack_examples(examples: Sequence[TrainingExample]) -> PackedExample:
    """Concatenate examples; positional ids restart at 0 for each sample."""
    if not examples:
        raise ValueError("cannot pack zero examples")
    return PackedExample(
        tokens=np.concatenate([e.tokens for e in examples]),
        targets=np.concatenate([e.targets for e in examples]),
        loss_tags=np.concatenate([e.loss_tags for e in examples]),
        positions=np.concatenate([e.positions for e in examples]),
        layouts=tuple(e.layout for e in examples),
    )
