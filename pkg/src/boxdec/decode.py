"""Decoding strategies over a trained model.

Three modes share one session interface:

* slow: classic token-by-token sampling; every emitted token is one pass.
* fast: block-pipelined. One pass carries the previous block as causal
  commit rows (entering the KV cache) together with six placeholder rows
  for the current block (bidirectional within the block, discarded from
  the cache). The last commit row acts as the anchor that proposes the
  next block opener, and the placeholder rows propose the remaining five
  slots, so each pass settles one full block.
* hybrid: fast plus per-block checking. A block that fails grammar
  validation, or whose coordinate slots look ambiguous, is re-decoded
  once token-by-token from the stored anchor logits; a second failure
  marks the block as flagged and decoding moves on.

Sessions are duck-typed (``prompt`` / ``step`` / ``truncate`` /
``committed`` / ``capacity``): ``CachedSession`` runs on the incremental
KV cache, ``UncachedSession`` recomputes a full forward per step and
exists as a correctness oracle, and tests drive the same loops with
scripted logits.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .codec import (BLOCK_LEN, FormatViolation, GrammarState, ParsedAnswer,
                    advance_past_flagged, parse_stream, validate_block)
from .model import KVCache, ModelConfig, forward, forward_rows
from .vocab import N_COORD_TOKENS, Vocabulary

MODES = ("slow", "fast", "hybrid")


@dataclass(frozen=True)
class DecodeConfig:
    """Sampling and scheduling knobs shared by all decode modes."""

    mode: str = "hybrid"
    temperature: float = 0.7
    top_p: float = 0.9
    repetition_penalty: float = 1.1
    n_future: int = 6
    max_new_tokens: int = 8192
    trigger_prob_threshold: float = 0.7
    trigger_spread_threshold: float = 80.0
    greedy: bool = False

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.greedy and self.temperature <= 0:
            raise ValueError("temperature must be positive unless greedy")
        if not (0 < self.top_p <= 1):
            raise ValueError("top_p must be in (0, 1]")
        if self.n_future < 1:
            raise ValueError("n_future must be at least 1")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be positive")


@dataclass(frozen=True)
class FallbackRecord:
    """One hybrid rejection: stream offset and reason.

    Reasons are prefixed ``FormatViolation`` (grammar) or
    ``SpatialAmbiguity`` (coordinate uncertainty).
    """

    offset: int
    reason: str


@dataclass(frozen=True)
class DecodeTrace:
    tokens: Tuple[int, ...]
    steps: int
    forward_passes: int
    n_boxes: int
    seconds: float
    terminated: bool
    mode: str
    fallbacks: Tuple[FallbackRecord, ...] = ()
    flagged: Tuple[int, ...] = ()

    @property
    def n_blocks(self) -> int:
        return len(self.tokens) // BLOCK_LEN

    def parse(self, vocab: Vocabulary, on_error: str = "truncate") -> ParsedAnswer:
        return parse_stream(list(self.tokens), vocab, on_error=on_error)


class Session(Protocol):
    """What a decode loop needs from a model backend."""

    @property
    def committed(self) -> int: ...

    @property
    def capacity(self) -> int: ...

    def prompt(self, tokens: Sequence[int]) -> np.ndarray: ...

    def step(self, tokens: Sequence[int], row_mask: np.ndarray,
             append: Sequence[bool]) -> np.ndarray: ...

    def truncate(self, length: int) -> None: ...


class CachedSession:
    """Incremental KV-cache backend."""

    def __init__(self, params: dict, cfg: ModelConfig) -> None:
        self.params = params
        self.cfg = cfg
        self.cache = KVCache(cfg)
        self.passes = 0

    @property
    def committed(self) -> int:
        return self.cache.length

    @property
    def capacity(self) -> int:
        return self.cfg.max_positions

    def prompt(self, tokens: Sequence[int]) -> np.ndarray:
        n = len(tokens)
        mask = np.tril(np.ones((n, n), dtype=bool))
        return self.step(tokens, mask, [True] * n)[-1]

    def step(self, tokens: Sequence[int], row_mask: np.ndarray,
             append: Sequence[bool]) -> np.ndarray:
        start = self.cache.length
        positions = start + np.arange(len(tokens))
        self.passes += 1
        return forward_rows(self.params, self.cfg, self.cache,
                            np.asarray(tokens), positions,
                            row_mask, np.asarray(append, dtype=bool))

    def truncate(self, length: int) -> None:
        self.cache.truncate(length)


class UncachedSession:
    """Cache-free oracle: every step recomputes the full prefix.

    Keeps the committed rows (tokens and positions) and rebuilds the
    composite attention mask on each call. Slower by construction, but
    any divergence from ``CachedSession`` indicates a cache bug.
    """

    def __init__(self, params: dict, cfg: ModelConfig) -> None:
        self.params = params
        self.cfg = cfg
        self._tokens: List[int] = []
        self._positions: List[int] = []
        self.passes = 0

    @property
    def committed(self) -> int:
        return len(self._tokens)

    @property
    def capacity(self) -> int:
        return self.cfg.max_positions

    def prompt(self, tokens: Sequence[int]) -> np.ndarray:
        n = len(tokens)
        mask = np.tril(np.ones((n, n), dtype=bool))
        return self.step(tokens, mask, [True] * n)[-1]

    def step(self, tokens: Sequence[int], row_mask: np.ndarray,
             append: Sequence[bool]) -> np.ndarray:
        hist = len(self._tokens)
        n = len(tokens)
        positions = self._positions + list(hist + np.arange(n))
        full = np.zeros((hist + n, hist + n), dtype=bool)
        full[:hist, :hist] = np.tril(np.ones((hist, hist), dtype=bool))
        full[hist:, :hist] = True
        full[hist:, hist:] = row_mask
        all_tokens = np.asarray(self._tokens + list(tokens))
        logits = forward(self.params, self.cfg, all_tokens,
                         np.asarray(positions), full)
        self.passes += 1
        for tok, pos, keep in zip(tokens, positions[hist:], append):
            if keep:
                self._tokens.append(int(tok))
                self._positions.append(int(pos))
        return logits[hist:]

    def truncate(self, length: int) -> None:
        if length > len(self._tokens):
            raise ValueError("cannot truncate beyond committed rows")
        del self._tokens[length:]
        del self._positions[length:]


def _softmax64(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    p = np.exp(z)
    return p / p.sum()


def sample_token(logits: np.ndarray, history: Sequence[int],
                 dcfg: DecodeConfig, rng: Optional[np.random.Generator]) -> int:
    """Penalised, tempered nucleus sampling; greedy bypasses everything."""
    if dcfg.greedy:
        return int(np.argmax(logits))
    if rng is None:
        raise ValueError("sampled decoding needs an rng")
    z = np.asarray(logits, dtype=np.float64).copy()
    if dcfg.repetition_penalty != 1.0:
        for tok in set(history):
            if z[tok] > 0:
                z[tok] /= dcfg.repetition_penalty
            else:
                z[tok] *= dcfg.repetition_penalty
    probs = _softmax64(z / dcfg.temperature)
    order = np.argsort(-probs)
    cum = np.cumsum(probs[order])
    keep = order[:int(np.searchsorted(cum, dcfg.top_p) + 1)]
    kept = probs[keep]
    return int(rng.choice(keep, p=kept / kept.sum()))


def ambiguity_trigger(coord_logits: np.ndarray,
                      prob_threshold: float = 0.7,
                      spread_threshold: float = 80.0) -> bool:
    """True when a coordinate slot is too uncertain to trust.

    ``coord_logits`` holds the logits of the coordinate tokens only,
    indexed by coordinate value. After renormalising, the trigger fires
    only when both conditions hold strictly: the best candidate sits
    below the probability threshold AND the five most likely candidates
    span more than the spread threshold in coordinate units.
    """
    if len(coord_logits) < 5:
        raise ValueError("need at least 5 coordinate candidates")
    probs = _softmax64(coord_logits)
    top5 = np.argsort(-probs)[:5]
    if probs[top5[0]] >= prob_threshold:
        return False
    return float(top5.max() - top5.min()) > spread_threshold


def _coord_slice(logits: np.ndarray, vocab: Vocabulary) -> np.ndarray:
    r = vocab.coord_range
    assert r.stop - r.start == N_COORD_TOKENS
    return logits[r.start:r.stop]


def _end_opener(stream: List[int], vocab: Vocabulary) -> bool:
    return len(stream) % BLOCK_LEN == 0 and len(stream) >= BLOCK_LEN \
        and stream[-BLOCK_LEN] == vocab.end


def _count_boxes(stream: Sequence[int], vocab: Vocabulary) -> int:
    return len(parse_stream(list(stream), vocab, on_error="truncate").boxes)


def _budget(session: Session, prompt_len: int, dcfg: DecodeConfig) -> int:
    """Token budget for new output: the config cap or remaining capacity."""
    return min(dcfg.max_new_tokens, session.capacity - prompt_len)


def _ntp_loop(session: Session, anchor: np.ndarray, history: List[int],
              limit: int, vocab: Vocabulary, dcfg: DecodeConfig, rng,
              mode: str, t0: float) -> DecodeTrace:
    """Token-by-token engine shared by slow mode and the n_future=1 path."""
    stream: List[int] = []
    terminated = False
    row_mask = np.ones((1, 1), dtype=bool)
    tok = sample_token(anchor, history, dcfg, rng)
    stream.append(tok)
    while len(stream) < limit and not terminated:
        if _end_opener(stream, vocab):
            terminated = True
            break
        anchor = session.step([tok], row_mask, [True])[-1]
        tok = sample_token(anchor, history + stream, dcfg, rng)
        stream.append(tok)
    if _end_opener(stream, vocab):
        terminated = True
    return DecodeTrace(tokens=tuple(stream), steps=len(stream),
                       forward_passes=session.passes,
                       n_boxes=_count_boxes(stream, vocab),
                       seconds=time.perf_counter() - t0,
                       terminated=terminated, mode=mode)


def decode_slow(session: Session, prompt_tokens: Sequence[int],
                vocab: Vocabulary, dcfg: DecodeConfig,
                rng: Optional[np.random.Generator] = None) -> DecodeTrace:
    """One forward pass per emitted token."""
    t0 = time.perf_counter()
    anchor = session.prompt(prompt_tokens)
    history = [int(t) for t in prompt_tokens]
    limit = _budget(session, len(history), dcfg)
    return _ntp_loop(session, anchor, history, limit, vocab, dcfg, rng,
                     "slow", t0)


def _commit_and_mask_rows(mask_id: int, pending: Optional[Sequence[int]],
                          opener: Optional[int]):
    """Row plan for one fast pass.

    With a pending block: 6 causal commit rows entering the cache plus 6
    opener-blind placeholder rows. Without one (first block, or right
    after a fallback already committed its block): 6 placeholder rows
    whose first row carries the already-known opener.
    """
    if pending is not None:
        tokens = list(pending) + [mask_id] * BLOCK_LEN
        n = 2 * BLOCK_LEN
        rm = np.zeros((n, n), dtype=bool)
        rm[:BLOCK_LEN, :BLOCK_LEN] = np.tril(
            np.ones((BLOCK_LEN, BLOCK_LEN), dtype=bool))
        rm[BLOCK_LEN:, :] = True
        append = [True] * BLOCK_LEN + [False] * BLOCK_LEN
        anchor_row, slot_row0 = BLOCK_LEN - 1, BLOCK_LEN
    else:
        tokens = [opener] + [mask_id] * (BLOCK_LEN - 1)
        rm = np.ones((BLOCK_LEN, BLOCK_LEN), dtype=bool)
        append = [False] * BLOCK_LEN
        anchor_row, slot_row0 = None, 0
    return tokens, rm, append, anchor_row, slot_row0


def decode_fast(session: Session, prompt_tokens: Sequence[int],
                vocab: Vocabulary, dcfg: DecodeConfig,
                rng: Optional[np.random.Generator] = None) -> DecodeTrace:
    """Block-pipelined decoding: one pass settles one six-token block.

    With ``n_future=1`` the pipeline has no placeholder rows left and
    collapses to the plain token-by-token engine, matching slow mode
    bit for bit.
    """
    if dcfg.n_future not in (1, BLOCK_LEN):
        raise ValueError(f"n_future must be 1 or {BLOCK_LEN}, got {dcfg.n_future}")
    t0 = time.perf_counter()
    anchor = session.prompt(prompt_tokens)
    history = [int(t) for t in prompt_tokens]
    limit = _budget(session, len(history), dcfg)
    if dcfg.n_future == 1:
        return _ntp_loop(session, anchor, history, limit, vocab, dcfg, rng,
                         "fast", t0)
    stream: List[int] = []
    steps = 0
    terminated = False
    pending: Optional[List[int]] = None
    opener = sample_token(anchor, history, dcfg, rng)
    while len(stream) + BLOCK_LEN <= limit:
        tokens, rm, append, anchor_row, slot0 = _commit_and_mask_rows(
            vocab.mask, pending, opener)
        out = session.step(tokens, rm, append)
        steps += 1
        if anchor_row is not None:
            opener = sample_token(out[anchor_row], history + stream, dcfg, rng)
        block = [opener]
        for j in range(1, BLOCK_LEN):
            block.append(sample_token(out[slot0 + j], history + stream + block,
                                      dcfg, rng))
        stream.extend(block)
        if opener == vocab.end:
            terminated = True
            break
        pending = block
        opener = None
    return DecodeTrace(tokens=tuple(stream), steps=steps,
                       forward_passes=session.passes,
                       n_boxes=_count_boxes(stream, vocab),
                       seconds=time.perf_counter() - t0,
                       terminated=terminated, mode="fast")


def _redecode_block(session: Session, anchor: np.ndarray, history: List[int],
                    dcfg: DecodeConfig, rng) -> Tuple[List[int], np.ndarray]:
    """Token-by-token re-decode of one block, committing rows as it feeds."""
    row_mask = np.ones((1, 1), dtype=bool)
    block: List[int] = []
    a = anchor
    for _ in range(BLOCK_LEN):
        tok = sample_token(a, history + block, dcfg, rng)
        a = session.step([tok], row_mask, [True])[-1]
        block.append(tok)
    return block, a


def _check_block(block: List[int], slot_logits: Optional[np.ndarray],
                 state: GrammarState, vocab: Vocabulary,
                 dcfg: DecodeConfig) -> Tuple[Optional[str], Optional[GrammarState]]:
    """Returns (rejection reason, advanced grammar state)."""
    try:
        _, nxt = validate_block(block, state, vocab)
    except FormatViolation as err:
        return f"FormatViolation: {err.reason}", None
    if slot_logits is not None and block[0] == vocab.box_open:
        for j in range(1, 5):
            if ambiguity_trigger(_coord_slice(slot_logits[j], vocab),
                                 dcfg.trigger_prob_threshold,
                                 dcfg.trigger_spread_threshold):
                return f"SpatialAmbiguity: slot {j}", None
    return None, nxt


def decode_hybrid(session: Session, prompt_tokens: Sequence[int],
                  vocab: Vocabulary, dcfg: DecodeConfig,
                  rng: Optional[np.random.Generator] = None) -> DecodeTrace:
    """Fast decoding with per-block verification and one-shot fallback.

    A rejected block is retried once with token-by-token decoding seeded
    from the same anchor logits. If the retry also fails validation the
    block is kept but recorded as flagged.
    """
    if dcfg.n_future != BLOCK_LEN:
        raise ValueError("hybrid decoding requires n_future == block length")
    t0 = time.perf_counter()
    anchor = session.prompt(prompt_tokens)
    history = [int(t) for t in prompt_tokens]
    limit = _budget(session, len(history), dcfg)
    stream: List[int] = []
    steps = 0
    fallbacks: List[FallbackRecord] = []
    flagged: List[int] = []
    terminated = False
    state = GrammarState.start()
    pending: Optional[List[int]] = None
    opener = sample_token(anchor, history, dcfg, rng)
    while len(stream) + BLOCK_LEN <= limit:
        tokens, rm, append, anchor_row, slot0 = _commit_and_mask_rows(
            vocab.mask, pending, opener)
        out = session.step(tokens, rm, append)
        steps += 1
        if anchor_row is not None:
            anchor = out[anchor_row]
            opener = sample_token(anchor, history + stream, dcfg, rng)
        block = [opener]
        for j in range(1, BLOCK_LEN):
            block.append(sample_token(out[slot0 + j], history + stream + block,
                                      dcfg, rng))
        reason, nxt = _check_block(block, out[slot0:], state, vocab, dcfg)
        if reason is None:
            stream.extend(block)
            state = nxt
            pending = block
        else:
            offset = len(stream)
            fallbacks.append(FallbackRecord(offset=offset, reason=reason))
            # The cache holds only verified blocks (the rejected block
            # was never committed), so this is normally a no-op.
            session.truncate(len(prompt_tokens) + offset)
            block, anchor = _redecode_block(session, anchor, history + stream,
                                            dcfg, rng)
            steps += 1
            retry_reason, nxt = _check_block(block, None, state, vocab, dcfg)
            if retry_reason is None:
                state = nxt
            else:
                flagged.append(offset)
                state = advance_past_flagged(block, state, vocab)
            stream.extend(block)
            pending = None  # the retry already committed its rows
        if block[0] == vocab.end:
            terminated = True
            break
        # A committed retry leaves no pending block, so the next pass is
        # placeholder-only and needs its opener drawn up front.
        opener = (sample_token(anchor, history + stream, dcfg, rng)
                  if pending is None else None)
    return DecodeTrace(tokens=tuple(stream), steps=steps,
                       forward_passes=session.passes,
                       n_boxes=_count_boxes(stream, vocab),
                       seconds=time.perf_counter() - t0,
                       terminated=terminated, mode="hybrid",
                       fallbacks=tuple(fallbacks), flagged=tuple(flagged))


def decode(session: Session, prompt_tokens: Sequence[int], vocab: Vocabulary,
           dcfg: DecodeConfig,
           rng: Optional[np.random.Generator] = None) -> DecodeTrace:
    """Dispatch on ``dcfg.mode``."""
    fn = {"slow": decode_slow, "fast": decode_fast, "hybrid": decode_hybrid}
    return fn[dcfg.mode](session, prompt_tokens, vocab, dcfg, rng)
