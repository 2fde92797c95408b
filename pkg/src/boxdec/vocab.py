"""Token vocabulary: coordinate bins, structural markers, words, cell tokens.

Token id layout is contiguous and fixed at construction time:

    [0, 1000]                 coordinate tokens <0> .. <1000>
    [1001, 1008]              structural tokens (see STRUCTURAL_SURFACES)
    [1009, 1009+n_text)       query word tokens
    [.., size)                visual cell tokens (one "empty" + one per category)

Coordinates live on a [0, 1] unit square and quantize to integer bins with
half-up rounding, so the bin width is 1/1000 and the roundtrip error is at
most 0.0005.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_UP
from typing import Iterable, List, Sequence, Tuple

N_COORD_TOKENS = 1001  # <0> .. <1000>

# Structural tokens, in id order starting right after the coordinate range.
BOX_OPEN = "<box>"
BOX_CLOSE = "</box>"
REF_OPEN = "<ref>"
REF_CLOSE = "</ref>"
NEG = "<neg>"
END = "<end>"
NULL = "<null>"
MASK = "[mask]"

STRUCTURAL_SURFACES = (
    BOX_OPEN,
    BOX_CLOSE,
    REF_OPEN,
    REF_CLOSE,
    NEG,
    END,
    NULL,
    MASK,
)

# Default word list. The first four double as scene category names; the rest
# pad out multi-word query material for grammar tests.
DEFAULT_WORDS = (
    "cat",
    "dog",
    "bird",
    "fish",
    "the",
    "a",
    "small",
    "big",
    "red",
    "blue",
    "green",
    "left",
    "right",
    "top",
    "near",
    "far",
)


def quantize_coord(v: float) -> int:
    """Map a unit-interval coordinate to its integer bin in [0, 1000].

    Rounds half up in decimal, so 0.4235 -> 424 even though the nearest
    binary double to 0.4235 * 1000 sits just below 423.5.
    """
    if not (0.0 <= v <= 1.0):
        raise ValueError(f"coordinate {v!r} outside [0, 1]")
    scaled = Decimal(repr(float(v))) * 1000
    return int(scaled.quantize(Decimal("1"), rounding=ROUND_HALF_UP))


def dequantize_coord(bin_index: int) -> float:
    """Bin center back to the unit interval (bin 424 -> 0.424)."""
    if not (0 <= bin_index < N_COORD_TOKENS):
        raise ValueError(f"coordinate bin {bin_index} outside [0, 1000]")
    return bin_index / 1000.0


@dataclass(frozen=True, order=True)
class QuantBox:
    """Axis-aligned box with quantized corners, x1 <= x2 and y1 <= y2."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self) -> None:
        for name, value in (("x1", self.x1), ("y1", self.y1),
                            ("x2", self.x2), ("y2", self.y2)):
            if not (0 <= value < N_COORD_TOKENS):
                raise ValueError(f"{name}={value} outside [0, 1000]")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"degenerate corner order: {self}")

    @classmethod
    def from_unit(cls, x1: float, y1: float, x2: float, y2: float) -> "QuantBox":
        return cls(quantize_coord(x1), quantize_coord(y1),
                   quantize_coord(x2), quantize_coord(y2))

    def corners(self) -> Tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)

    def to_unit(self) -> Tuple[float, float, float, float]:
        return tuple(dequantize_coord(c) for c in self.corners())


def sort_boxes(boxes: Iterable[QuantBox]) -> List[QuantBox]:
    """Canonical reading order: ascending x1, then y1; ties keep input order."""
    return sorted(boxes, key=lambda b: (b.x1, b.y1))


@dataclass(frozen=True)
class Vocabulary:
    """Fixed token id table shared by the codec, the model, and the decoders.

    Attributes:
        words: query word surfaces, in id order.
        categories: names of the scene categories (a prefix of ``words``).
    """

    words: Tuple[str, ...] = DEFAULT_WORDS
    n_categories: int = 4
    _surfaces: Tuple[str, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.n_categories < 1 or self.n_categories > len(self.words):
            raise ValueError("n_categories must be in [1, len(words)]")
        if len(set(self.words)) != len(self.words):
            raise ValueError("duplicate word surfaces")
        coord = tuple(f"<{i}>" for i in range(N_COORD_TOKENS))
        cells = ("[cell:empty]",) + tuple(
            f"[cell:{w}]" for w in self.words[: self.n_categories]
        )
        surfaces = coord + STRUCTURAL_SURFACES + self.words + cells
        object.__setattr__(self, "_surfaces", surfaces)

    # ---- ranges ------------------------------------------------------------

    @property
    def size(self) -> int:
        return len(self._surfaces)

    @property
    def coord_range(self) -> range:
        return range(0, N_COORD_TOKENS)

    @property
    def structural_range(self) -> range:
        return range(N_COORD_TOKENS, N_COORD_TOKENS + len(STRUCTURAL_SURFACES))

    @property
    def text_range(self) -> range:
        start = N_COORD_TOKENS + len(STRUCTURAL_SURFACES)
        return range(start, start + len(self.words))

    @property
    def visual_range(self) -> range:
        return range(self.text_range.stop, self.size)

    # ---- named structural ids ----------------------------------------------

    @property
    def box_open(self) -> int:
        return N_COORD_TOKENS + STRUCTURAL_SURFACES.index(BOX_OPEN)

    @property
    def box_close(self) -> int:
        return N_COORD_TOKENS + STRUCTURAL_SURFACES.index(BOX_CLOSE)

    @property
    def ref_open(self) -> int:
        return N_COORD_TOKENS + STRUCTURAL_SURFACES.index(REF_OPEN)

    @property
    def ref_close(self) -> int:
        return N_COORD_TOKENS + STRUCTURAL_SURFACES.index(REF_CLOSE)

    @property
    def neg(self) -> int:
        return N_COORD_TOKENS + STRUCTURAL_SURFACES.index(NEG)

    @property
    def end(self) -> int:
        return N_COORD_TOKENS + STRUCTURAL_SURFACES.index(END)

    @property
    def null(self) -> int:
        return N_COORD_TOKENS + STRUCTURAL_SURFACES.index(NULL)

    @property
    def mask(self) -> int:
        return N_COORD_TOKENS + STRUCTURAL_SURFACES.index(MASK)

    @property
    def cell_empty(self) -> int:
        return self.visual_range.start

    def cell_of(self, category: int) -> int:
        if not (0 <= category < self.n_categories):
            raise ValueError(f"category {category} outside [0, {self.n_categories})")
        return self.visual_range.start + 1 + category

    def word_id(self, word: str) -> int:
        try:
            return self.text_range.start + self.words.index(word)
        except ValueError:
            raise KeyError(f"unknown word {word!r}") from None

    @property
    def categories(self) -> Tuple[str, ...]:
        return self.words[: self.n_categories]

    # ---- coordinate helpers --------------------------------------------------

    def coord_id(self, bin_index: int) -> int:
        if not (0 <= bin_index < N_COORD_TOKENS):
            raise ValueError(f"coordinate bin {bin_index} outside [0, 1000]")
        return bin_index

    def coord_value(self, token_id: int) -> int:
        """Integer bin of a coordinate token (identity range check)."""
        if token_id not in self.coord_range:
            raise ValueError(f"token {token_id} is not a coordinate token")
        return token_id

    def is_coord(self, token_id: int) -> bool:
        return 0 <= token_id < N_COORD_TOKENS

    # ---- surfaces ------------------------------------------------------------

    def surface(self, token_id: int) -> str:
        if not (0 <= token_id < self.size):
            raise ValueError(f"token id {token_id} outside vocabulary")
        return self._surfaces[token_id]

    def id_of(self, surface: str) -> int:
        try:
            return self._surfaces.index(surface)
        except ValueError:
            raise KeyError(f"unknown surface {surface!r}") from None

    def render(self, token_ids: Sequence[int]) -> str:
        """Concatenated surface string, e.g. ``<box><100><200><300><400></box>``."""
        return "".join(self.surface(t) for t in token_ids)

    def to_tsv(self) -> str:
        """One ``id<TAB>surface`` line per token, in id order."""
        return "\n".join(f"{i}\t{s}" for i, s in enumerate(self._surfaces)) + "\n"
