"""Synthetic desk-scale scenes: category rectangles on a coarse cell grid.

A scene is an 8x8 grid of cells (125 coordinate units each). Objects are
axis-aligned cell rectangles, at most 5 per scene and at most 2 per
category. Two extra placement rules keep the task well-posed given that the
visual stream only carries one category token per cell: objects never share
a cell, and same-category objects keep at least one empty cell between them
in every direction, so connected components identify objects exactly.

Queries name a category. Positive queries expect every box of that
category in reading order; negative queries name an absent category.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .vocab import QuantBox, Vocabulary, sort_boxes

GRID = 8
CELL_UNITS = 1000 // GRID  # 125 coordinate units per cell
MAX_OBJECTS = 5
MAX_PER_CATEGORY = 2
MAX_CELL_SPAN = 3
TRAIN_SCENES = 10_000
EVAL_SCENES = 500
EVAL_SEED_BASE = 1_000_000
NEGATIVE_RATIO = 0.25


@dataclass(frozen=True)
class SceneObject:
    """One placed rectangle: cell anchor (col, row) and span in cells."""

    category: int
    col: int
    row: int
    width: int
    height: int

    def cells(self) -> Tuple[int, int, int, int]:
        return (self.col, self.row, self.width, self.height)

    def box(self) -> QuantBox:
        return QuantBox(self.col * CELL_UNITS, self.row * CELL_UNITS,
                        (self.col + self.width) * CELL_UNITS,
                        (self.row + self.height) * CELL_UNITS)

    def _rect(self, pad: int = 0) -> Tuple[int, int, int, int]:
        return (self.col - pad, self.row - pad,
                self.col + self.width + pad, self.row + self.height + pad)

    def overlaps(self, other: "SceneObject", pad: int = 0) -> bool:
        a = self._rect(pad)
        b = other._rect()
        return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


@dataclass(frozen=True)
class Scene:
    seed: int
    grid: int
    objects: Tuple[SceneObject, ...]

    def boxes_of(self, category: int) -> List[QuantBox]:
        return sort_boxes(o.box() for o in self.objects
                          if o.category == category)

    def present_categories(self) -> List[int]:
        return sorted({o.category for o in self.objects})


def generate_scene(seed: int, grid: int = GRID,
                   max_objects: int = MAX_OBJECTS,
                   n_categories: Optional[int] = None,
                   vocab: Optional[Vocabulary] = None) -> Scene:
    """Deterministic scene for a seed; placement failures shrink the count."""
    if vocab is None:
        vocab = Vocabulary()
    if n_categories is None:
        n_categories = vocab.n_categories
    rng = np.random.default_rng(seed)
    wanted = int(rng.integers(0, max_objects + 1))
    placed: List[SceneObject] = []
    quota = {c: MAX_PER_CATEGORY for c in range(n_categories)}

    for _ in range(wanted):
        open_cats = [c for c, q in quota.items() if q > 0]
        if not open_cats:
            break
        for _attempt in range(200):
            cat = int(rng.choice(open_cats))
            w = int(rng.integers(1, min(MAX_CELL_SPAN, grid) + 1))
            h = int(rng.integers(1, min(MAX_CELL_SPAN, grid) + 1))
            col = int(rng.integers(0, grid - w + 1))
            row = int(rng.integers(0, grid - h + 1))
            cand = SceneObject(cat, col, row, w, h)
            ok = all(
                not cand.overlaps(o, pad=1 if o.category == cat else 0)
                for o in placed
            )
            if ok:
                placed.append(cand)
                quota[cat] -= 1
                break
        else:
            break  # grid too crowded for another object
    return Scene(seed=seed, grid=grid, objects=tuple(placed))


def visual_tokens(scene: Scene, vocab: Vocabulary) -> np.ndarray:
    """Row-major cell tokens: empty or the occupying object's category."""
    cells = np.full(scene.grid * scene.grid, vocab.cell_empty, dtype=np.int64)
    for o in scene.objects:
        for r in range(o.row, o.row + o.height):
            start = r * scene.grid + o.col
            cells[start:start + o.width] = vocab.cell_of(o.category)
    return cells


@dataclass(frozen=True)
class QueryCase:
    """One supervised query against a scene."""

    tokens: Tuple[int, ...]
    expected: Tuple[QuantBox, ...]
    negative: bool


def query_cases(scene: Scene, vocab: Vocabulary,
                negative_ratio: float = NEGATIVE_RATIO) -> List[QueryCase]:
    """All positive queries plus sampled negatives at the requested ratio.

    With ratio 1.0 every absent category is queried; otherwise the negative
    count is chosen so negatives approximate `ratio` of all cases.
    """
    if not (0.0 <= negative_ratio <= 1.0):
        raise ValueError("negative_ratio must lie in [0, 1]")
    present = scene.present_categories()
    absent = [c for c in range(vocab.n_categories) if c not in present]
    cases = [
        QueryCase(tokens=(vocab.word_id(vocab.categories[c]),),
                  expected=tuple(scene.boxes_of(c)), negative=False)
        for c in present
    ]
    if negative_ratio >= 1.0:
        n_neg = len(absent)
    else:
        n_neg = round(len(cases) * negative_ratio / (1.0 - negative_ratio))
        n_neg = min(n_neg, len(absent))
    if n_neg:
        rng = np.random.default_rng([scene.seed, 0xBEEF])
        chosen = sorted(rng.choice(absent, size=n_neg, replace=False).tolist())
        cases.extend(
            QueryCase(tokens=(vocab.word_id(vocab.categories[c]),),
                      expected=(), negative=True)
            for c in chosen
        )
    return cases


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneRecord:
    scene: Scene
    queries: Tuple[QueryCase, ...]


def write_dataset(path: Path, seeds: Iterable[int], vocab: Vocabulary,
                  negative_ratio: float = NEGATIVE_RATIO) -> int:
    """Generate scenes for the seeds and write one JSON line per scene."""
    path = Path(path)
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for seed in seeds:
            scene = generate_scene(int(seed), vocab=vocab)
            queries = query_cases(scene, vocab, negative_ratio)
            record = {
                "seed": scene.seed,
                "grid": scene.grid,
                "objects": [asdict(o) for o in scene.objects],
                "queries": [
                    {
                        "tokens": list(q.tokens),
                        "text": " ".join(vocab.surface(t) for t in q.tokens),
                        "expected": [list(b.corners()) for b in q.expected],
                        "negative": q.negative,
                    }
                    for q in queries
                ],
            }
            fh.write(json.dumps(record) + "\n")
            count += 1
    return count


def read_dataset(path: Path) -> List[SceneRecord]:
    records: List[SceneRecord] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            raw = json.loads(line)
            scene = Scene(
                seed=raw["seed"], grid=raw["grid"],
                objects=tuple(SceneObject(**o) for o in raw["objects"]),
            )
            queries = tuple(
                QueryCase(
                    tokens=tuple(q["tokens"]),
                    expected=tuple(QuantBox(*b) for b in q["expected"]),
                    negative=q["negative"],
                )
                for q in raw["queries"]
            )
            records.append(SceneRecord(scene=scene, queries=queries))
    return records


def train_seeds(n: int = TRAIN_SCENES) -> range:
    return range(n)


def eval_seeds(n: int = EVAL_SCENES) -> range:
    return range(EVAL_SEED_BASE, EVAL_SEED_BASE + n)
