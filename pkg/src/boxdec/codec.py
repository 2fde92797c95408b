"""Block grammar: fixed 6-token blocks, validation automaton, encode/parse.

Every answer stream is a sequence of 6-token blocks:

    Semantic  <ref> word+ </ref>  (null padded; long queries span blocks)
    Box       <box> x1 y1 x2 y2 </box>
    Negative  <neg> followed by 5 nulls
    End       <end> followed by 5 nulls

Block order follows a small automaton: an answer opens with a Semantic block
(or a bare End for the empty answer), boxes follow their query's Semantic
run, a Negative block declares a query with no boxes, and End terminates the
stream. <null> appears only as trailing padding.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from .vocab import QuantBox, Vocabulary, sort_boxes

BLOCK_LEN = 6


class BlockKind(enum.Enum):
    SEMANTIC = "semantic"
    BOX = "box"
    NEGATIVE = "negative"
    END = "end"


class FormatViolation(Exception):
    """A token stream broke the block grammar.

    Attributes:
        reason: human-readable description.
        offset: index of the offending token. Within-block (0..5) when raised
            by validate_block, absolute stream index when raised by
            parse_stream.
        block_offset: absolute stream index of the offending block's first
            token (set by parse_stream, None from validate_block).
    """

    def __init__(self, reason: str, offset: int,
                 block_offset: Optional[int] = None) -> None:
        super().__init__(f"{reason} (offset {offset})")
        self.reason = reason
        self.offset = offset
        self.block_offset = block_offset


@dataclass(frozen=True)
class Block:
    """One grammar block: exactly BLOCK_LEN tokens plus its classified kind."""

    kind: BlockKind
    tokens: Tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.tokens) != BLOCK_LEN:
            raise ValueError(
                f"block must hold exactly {BLOCK_LEN} tokens, got {len(self.tokens)}"
            )


@dataclass(frozen=True)
class GrammarState:
    """Automaton state between blocks.

    ``in_ref`` marks an unclosed query: only a Semantic continuation may
    follow. ``allowed`` is the set of kinds the next block may take; empty
    means the stream has terminated.
    """

    in_ref: bool
    allowed: frozenset

    @classmethod
    def start(cls) -> "GrammarState":
        return cls(in_ref=False,
                   allowed=frozenset({BlockKind.SEMANTIC, BlockKind.END}))

    @property
    def terminated(self) -> bool:
        return not self.allowed


_AFTER_SEMANTIC_CLOSED = frozenset({BlockKind.BOX, BlockKind.NEGATIVE})
_AFTER_SEMANTIC_OPEN = frozenset({BlockKind.SEMANTIC})
_AFTER_BOX = frozenset({BlockKind.BOX, BlockKind.SEMANTIC, BlockKind.END})
_AFTER_NEGATIVE = frozenset({BlockKind.SEMANTIC, BlockKind.END})


def _validate_semantic(tokens: Sequence[int], state: GrammarState,
                       vocab: Vocabulary) -> GrammarState:
    """Scan a Semantic block (opener or continuation); return the next state."""
    closed = False
    saw_word = state.in_ref  # words may have arrived in earlier blocks
    start = 0
    if not state.in_ref:
        start = 1  # position 0 is <ref>, checked by the caller
    for i in range(start, BLOCK_LEN):
        t = tokens[i]
        if closed:
            if t != vocab.null:
                raise FormatViolation(
                    f"expected <null> padding after </ref>, got {vocab.surface(t)}", i)
        elif t in vocab.text_range:
            saw_word = True
        elif t == vocab.ref_close:
            if not saw_word:
                raise FormatViolation("query closed with no words", i)
            closed = True
        elif t == vocab.null:
            raise FormatViolation("query not closed before padding", i)
        else:
            raise FormatViolation(
                f"{vocab.surface(t)} not allowed inside a query", i)
    if closed:
        return GrammarState(in_ref=False, allowed=_AFTER_SEMANTIC_CLOSED)
    return GrammarState(in_ref=True, allowed=_AFTER_SEMANTIC_OPEN)


def _validate_box(tokens: Sequence[int], vocab: Vocabulary) -> GrammarState:
    for i in range(1, 5):
        if not vocab.is_coord(tokens[i]):
            raise FormatViolation(
                f"expected coordinate token, got {vocab.surface(tokens[i])}", i)
    if tokens[5] != vocab.box_close:
        raise FormatViolation(
            f"expected </box>, got {vocab.surface(tokens[5])}", 5)
    x1, y1, x2, y2 = (vocab.coord_value(tokens[i]) for i in range(1, 5))
    if x2 < x1:
        raise FormatViolation(f"x2={x2} precedes x1={x1}", 3)
    if y2 < y1:
        raise FormatViolation(f"y2={y2} precedes y1={y1}", 4)
    return GrammarState(in_ref=False, allowed=_AFTER_BOX)


def _validate_marker_block(tokens: Sequence[int], vocab: Vocabulary,
                           next_state: GrammarState) -> GrammarState:
    """Negative and End blocks: opener then 5 nulls."""
    for i in range(1, BLOCK_LEN):
        if tokens[i] != vocab.null:
            raise FormatViolation(
                f"expected <null> padding, got {vocab.surface(tokens[i])}", i)
    return next_state


def validate_block(tokens: Sequence[int], state: GrammarState,
                   vocab: Vocabulary) -> Tuple[BlockKind, GrammarState]:
    """Classify one block and advance the automaton.

    Raises:
        FormatViolation: with a within-block offset (0..5) at the first
            offending token.
        ValueError: if the slice is not exactly BLOCK_LEN tokens (a caller
            contract bug, not a stream error).
    """
    if len(tokens) != BLOCK_LEN:
        raise ValueError(f"blocks are {BLOCK_LEN} tokens, got {len(tokens)}")
    if state.terminated:
        raise FormatViolation("tokens after <end> block", 0)

    if state.in_ref:
        kind = BlockKind.SEMANTIC
        if tokens[0] != vocab.ref_close and tokens[0] not in vocab.text_range:
            raise FormatViolation(
                f"unclosed query continues, got {vocab.surface(tokens[0])}", 0)
        return kind, _validate_semantic(tokens, state, vocab)

    opener = tokens[0]
    if opener == vocab.ref_open:
        kind = BlockKind.SEMANTIC
    elif opener == vocab.box_open:
        kind = BlockKind.BOX
    elif opener == vocab.neg:
        kind = BlockKind.NEGATIVE
    elif opener == vocab.end:
        kind = BlockKind.END
    else:
        raise FormatViolation(
            f"block cannot open with {vocab.surface(opener)}", 0)
    if kind not in state.allowed:
        allowed = ", ".join(sorted(k.value for k in state.allowed))
        raise FormatViolation(
            f"{kind.value} block not allowed here (expected one of: {allowed})", 0)

    if kind is BlockKind.SEMANTIC:
        return kind, _validate_semantic(tokens, state, vocab)
    if kind is BlockKind.BOX:
        return kind, _validate_box(tokens, vocab)
    if kind is BlockKind.NEGATIVE:
        return kind, _validate_marker_block(
            tokens, vocab, GrammarState(in_ref=False, allowed=_AFTER_NEGATIVE))
    return kind, _validate_marker_block(
        tokens, vocab, GrammarState(in_ref=False, allowed=frozenset()))


def advance_past_flagged(tokens: Sequence[int], state: GrammarState,
                         vocab: Vocabulary) -> GrammarState:
    """Best-effort automaton state after a block that failed validation.

    A decoder that keeps a malformed block in the stream and moves on
    still needs a state for the blocks that follow. The opener alone
    advances the automaton when that transition by itself was legal;
    otherwise the state is left untouched. Flagged semantic blocks are
    assumed to have closed their query.
    """
    if state.terminated or state.in_ref:
        return state
    opener = tokens[0]
    if opener == vocab.ref_open and BlockKind.SEMANTIC in state.allowed:
        return GrammarState(in_ref=False, allowed=_AFTER_SEMANTIC_CLOSED)
    if opener == vocab.box_open and BlockKind.BOX in state.allowed:
        return GrammarState(in_ref=False, allowed=_AFTER_BOX)
    if opener == vocab.neg and BlockKind.NEGATIVE in state.allowed:
        return GrammarState(in_ref=False, allowed=_AFTER_NEGATIVE)
    if opener == vocab.end and BlockKind.END in state.allowed:
        return GrammarState(in_ref=False, allowed=frozenset())
    return state


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnswerItem:
    """One query with its boxes; ``negative`` declares an absent target."""

    query: Tuple[int, ...]
    boxes: Tuple[QuantBox, ...] = ()
    negative: bool = False

    def __post_init__(self) -> None:
        if not self.query:
            raise ValueError("query must hold at least one word token")
        if self.negative and self.boxes:
            raise ValueError("negative item cannot carry boxes")
        if not self.negative and not self.boxes:
            raise ValueError("positive item needs at least one box")


AnswerLike = Union[AnswerItem, Tuple[Sequence[int], Sequence[QuantBox]]]


def _normalize_item(item: AnswerLike) -> AnswerItem:
    if isinstance(item, AnswerItem):
        return item
    query, boxes = item
    boxes = tuple(boxes)
    return AnswerItem(query=tuple(query), boxes=boxes, negative=not boxes)


def _pad(tokens: List[int], vocab: Vocabulary) -> Tuple[int, ...]:
    return tuple(tokens + [vocab.null] * (BLOCK_LEN - len(tokens)))


def _semantic_blocks(query: Sequence[int], vocab: Vocabulary) -> List[Block]:
    for t in query:
        if t not in vocab.text_range:
            raise ValueError(f"query token {t} is not a word token")
    seq = [vocab.ref_open, *query, vocab.ref_close]
    blocks = []
    for k in range(0, len(seq), BLOCK_LEN):
        chunk = seq[k:k + BLOCK_LEN]
        blocks.append(Block(BlockKind.SEMANTIC, _pad(list(chunk), vocab)))
    return blocks


def encode_answer(items: Iterable[AnswerLike], vocab: Vocabulary) -> List[Block]:
    """Build the block sequence for an answer.

    Boxes are emitted in canonical X-then-Y order regardless of input order.
    An item with no boxes becomes a Negative declaration. One End block
    always terminates the answer.
    """
    blocks: List[Block] = []
    for raw in items:
        item = _normalize_item(raw)
        blocks.extend(_semantic_blocks(item.query, vocab))
        if item.negative:
            blocks.append(Block(BlockKind.NEGATIVE, _pad([vocab.neg], vocab)))
        else:
            for box in sort_boxes(item.boxes):
                tokens = (vocab.box_open, *box.corners(), vocab.box_close)
                blocks.append(Block(BlockKind.BOX, tokens))
    blocks.append(Block(BlockKind.END, _pad([vocab.end], vocab)))
    return blocks


def flatten(blocks: Iterable[Block]) -> List[int]:
    out: List[int] = []
    for b in blocks:
        out.extend(b.tokens)
    return out


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParsedAnswer:
    """Structured view of a decoded stream.

    ``items`` preserves stream order. ``terminated`` is True when an End
    block was seen; a trailing partial block (stream cut mid-block) is
    dropped. In a terminated answer every item has boxes or is negative; an
    unterminated stream may end with an open, still-empty item.
    """

    items: Tuple[AnswerItem, ...]
    terminated: bool

    @property
    def groups(self) -> List[Tuple[Tuple[int, ...], List[QuantBox]]]:
        return [(it.query, list(it.boxes)) for it in self.items if not it.negative]

    @property
    def negatives(self) -> List[Tuple[int, ...]]:
        return [it.query for it in self.items if it.negative]

    @property
    def boxes(self) -> List[QuantBox]:
        out: List[QuantBox] = []
        for it in self.items:
            out.extend(it.boxes)
        return out


@dataclass
class _OpenItem:
    query: List[int] = field(default_factory=list)
    boxes: List[QuantBox] = field(default_factory=list)
    negative: bool = False

    def close(self) -> AnswerItem:
        # Bypass AnswerItem's positive/negative checks for unterminated
        # streams: an open item may legitimately still be empty.
        item = object.__new__(AnswerItem)
        object.__setattr__(item, "query", tuple(self.query))
        object.__setattr__(item, "boxes", tuple(self.boxes))
        object.__setattr__(item, "negative", self.negative)
        return item


def parse_stream(tokens: Sequence[int], vocab: Vocabulary,
                 on_error: str = "raise") -> ParsedAnswer:
    """Chunk a stream into blocks, validate, and assemble the answer.

    Args:
        tokens: decoded stream (prompt excluded), null padding included.
        on_error: "raise" re-raises FormatViolation with an absolute token
            offset; "truncate" returns whatever parsed cleanly before the
            violation.
    """
    if on_error not in ("raise", "truncate"):
        raise ValueError(f"unknown on_error mode {on_error!r}")
    state = GrammarState.start()
    items: List[AnswerItem] = []
    current: Optional[_OpenItem] = None
    terminated = False
    consumed = 0

    for start in range(0, len(tokens) - BLOCK_LEN + 1, BLOCK_LEN):
        chunk = tokens[start:start + BLOCK_LEN]
        was_in_ref = state.in_ref
        try:
            kind, state = validate_block(chunk, state, vocab)
        except FormatViolation as e:
            if on_error == "truncate":
                return ParsedAnswer(items=_close_into(items, current),
                                    terminated=terminated)
            raise FormatViolation(e.reason, start + e.offset,
                                  block_offset=start) from None
        consumed = start + BLOCK_LEN

        if kind is BlockKind.SEMANTIC:
            if not was_in_ref:
                if current is not None:
                    items.append(current.close())
                current = _OpenItem()
            current.query.extend(t for t in chunk if t in vocab.text_range)
        elif kind is BlockKind.BOX:
            corners = [vocab.coord_value(t) for t in chunk[1:5]]
            current.boxes.append(QuantBox(*corners))
        elif kind is BlockKind.NEGATIVE:
            current.negative = True
            items.append(current.close())
            current = None
        else:  # END
            terminated = True
            break

    # A stray fragment after <end> is a violation; before <end> it is just a
    # truncated stream and gets dropped.
    if terminated and len(tokens) > consumed and on_error == "raise":
        raise FormatViolation("tokens after <end> block", consumed,
                              block_offset=consumed)
    return ParsedAnswer(items=_close_into(items, current), terminated=terminated)


def _close_into(items: List[AnswerItem],
                current: Optional[_OpenItem]) -> Tuple[AnswerItem, ...]:
    if current is not None:
        return tuple(items) + (current.close(),)
    return tuple(items)
