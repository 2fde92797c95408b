"""Box-matching metrics and decode benchmarking.

IoU-threshold F1 with greedy one-to-one matching, point correctness,
throughput accounting, and the query sweep used by the eval harness.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .decode import DecodeConfig, DecodeTrace, Session, decode
from .scenes import Scene, query_cases, visual_tokens
from .vocab import QuantBox, Vocabulary

THRESHOLDS: Tuple[float, ...] = tuple(round(0.50 + 0.05 * i, 2)
                                      for i in range(10))


def iou(a: QuantBox, b: QuantBox) -> float:
    """Intersection over union of two corner boxes; 0 for zero-area unions."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(0, ix) * max(0, iy)
    union = ((a.x2 - a.x1) * (a.y2 - a.y1)
             + (b.x2 - b.x1) * (b.y2 - b.y1) - inter)
    if union <= 0:
        return 0.0
    return inter / union


def match_at_threshold(preds: Sequence[QuantBox], gts: Sequence[QuantBox],
                       t: float) -> Tuple[int, int, int]:
    """Greedy one-to-one matching in descending IoU order.

    A pair counts only when IoU strictly exceeds ``t``. Ties break on
    the lower prediction index, then the lower ground-truth index.
    Returns ``(tp, fp, fn)``.
    """
    if not (0 < t <= 1):
        raise ValueError(f"threshold must be in (0, 1], got {t}")
    pairs = []
    for pi, p in enumerate(preds):
        for gi, g in enumerate(gts):
            v = iou(p, g)
            if v > t:
                pairs.append((-v, pi, gi))
    pairs.sort()
    used_p, used_g = set(), set()
    tp = 0
    for _, pi, gi in pairs:
        if pi in used_p or gi in used_g:
            continue
        used_p.add(pi)
        used_g.add(gi)
        tp += 1
    return tp, len(preds) - tp, len(gts) - tp


def _prf(tp: int, fp: int, fn: int) -> Tuple[float, float, float]:
    if tp + fp == 0:
        precision = 1.0 if fn == 0 else 0.0
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 1.0 if fp == 0 else 0.0
    else:
        recall = tp / (tp + fn)
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


@dataclass
class MatchResult:
    """Accumulated per-threshold counts across any number of queries."""

    thresholds: Tuple[float, ...] = THRESHOLDS
    tp: np.ndarray = field(default=None)
    fp: np.ndarray = field(default=None)
    fn: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        n = len(self.thresholds)
        for name in ("tp", "fp", "fn"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(n, dtype=np.int64))

    def add(self, preds: Sequence[QuantBox], gts: Sequence[QuantBox]) -> None:
        for i, t in enumerate(self.thresholds):
            tp, fp, fn = match_at_threshold(preds, gts, t)
            self.tp[i] += tp
            self.fp[i] += fp
            self.fn[i] += fn

    def merge(self, other: "MatchResult") -> None:
        if other.thresholds != self.thresholds:
            raise ValueError("cannot merge results over different sweeps")
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn

    def _index(self, t: float) -> int:
        try:
            return self.thresholds.index(round(t, 2))
        except ValueError:
            raise KeyError(f"threshold {t} not in sweep {self.thresholds}")

    def prf_at(self, t: float) -> Tuple[float, float, float]:
        i = self._index(t)
        return _prf(int(self.tp[i]), int(self.fp[i]), int(self.fn[i]))

    def f1_at(self, t: float) -> float:
        return self.prf_at(t)[2]

    def summary(self) -> Dict[str, float]:
        rows = [_prf(int(tp), int(fp), int(fn))
                for tp, fp, fn in zip(self.tp, self.fp, self.fn)]
        precisions, recalls, f1s = zip(*rows)
        return {
            "F1@0.5": self.f1_at(0.5),
            "F1@0.95": self.f1_at(0.95),
            "F1@mean": float(np.mean(f1s)),
            "P@mean": float(np.mean(precisions)),
            "R@mean": float(np.mean(recalls)),
        }


def f1_suite(preds: Sequence[QuantBox],
             gts: Sequence[QuantBox]) -> Dict[str, float]:
    """Threshold-swept scores for one prediction/ground-truth pair."""
    result = MatchResult()
    result.add(preds, gts)
    return result.summary()


def point_hit(point: Tuple[float, float], box: QuantBox) -> bool:
    """Boundary-inclusive membership of a point in a box."""
    x, y = point
    return box.x1 <= x <= box.x2 and box.y1 <= y <= box.y2


@dataclass(frozen=True)
class ThroughputReport:
    boxes: int
    seconds: float
    forward_passes: int
    bps: float
    clamped: bool = False


def measure_bps(trace: DecodeTrace) -> ThroughputReport:
    """Boxes-per-second throughput of one decode trace."""
    seconds = trace.seconds
    clamped = seconds <= 0
    if clamped:
        seconds = max(seconds, time.get_clock_info("perf_counter").resolution)
    return ThroughputReport(boxes=trace.n_boxes, seconds=seconds,
                            forward_passes=trace.forward_passes,
                            bps=trace.n_boxes / seconds, clamped=clamped)


# ---------------------------------------------------------------------------
# corpus sweep


@dataclass(frozen=True)
class QueryRecord:
    """One decoded query with everything the aggregators need."""

    scene_seed: int
    query: Tuple[int, ...]
    n_objects: int
    negative: bool
    gt_boxes: Tuple[QuantBox, ...]
    pred_boxes: Tuple[QuantBox, ...]
    has_negative_block: bool
    terminated: bool
    steps: int
    forward_passes: int
    n_boxes: int
    n_fallbacks: int
    n_flagged: int
    seconds: float


def run_queries(make_session: Callable[[], Session], scenes: Iterable[Scene],
                vocab: Vocabulary, dcfg: DecodeConfig,
                rng: Optional[np.random.Generator] = None) -> List[QueryRecord]:
    """Decode every query of every scene with a fresh session each."""
    records: List[QueryRecord] = []
    for scene in scenes:
        vis = visual_tokens(scene, vocab)
        for case in query_cases(scene, vocab):
            prompt = [int(t) for t in vis] + list(case.tokens)
            trace = decode(make_session(), prompt, vocab, dcfg, rng)
            parsed = trace.parse(vocab, on_error="truncate")
            records.append(QueryRecord(
                scene_seed=scene.seed,
                query=tuple(case.tokens),
                n_objects=len(scene.objects),
                negative=case.negative,
                gt_boxes=tuple(case.expected),
                pred_boxes=tuple(parsed.boxes),
                has_negative_block=any(it.negative for it in parsed.items),
                terminated=trace.terminated,
                steps=trace.steps,
                forward_passes=trace.forward_passes,
                n_boxes=trace.n_boxes,
                n_fallbacks=len(trace.fallbacks),
                n_flagged=len(trace.flagged),
                seconds=trace.seconds,
            ))
    return records


@dataclass
class EvalSummary:
    """Micro-aggregated scores plus throughput and fallback totals."""

    match: MatchResult
    n_queries: int = 0
    n_negatives: int = 0
    n_abstained: int = 0
    forward_passes: int = 0
    emitted_boxes: int = 0
    seconds: float = 0.0
    fallbacks: int = 0
    flagged: int = 0

    def scores(self) -> Dict[str, float]:
        out = self.match.summary()
        out["BPS"] = self.emitted_boxes / self.seconds if self.seconds > 0 else 0.0
        out["passes_per_box"] = (self.forward_passes / self.emitted_boxes
                                 if self.emitted_boxes else float("inf"))
        out["negative_abstention"] = (self.n_abstained / self.n_negatives
                                      if self.n_negatives else 1.0)
        out["fallbacks"] = float(self.fallbacks)
        return out


def aggregate(records: Sequence[QueryRecord]) -> EvalSummary:
    summary = EvalSummary(match=MatchResult())
    for r in records:
        summary.match.add(r.pred_boxes, r.gt_boxes)
        summary.n_queries += 1
        if r.negative:
            summary.n_negatives += 1
            if r.has_negative_block and not r.pred_boxes:
                summary.n_abstained += 1
        summary.forward_passes += r.forward_passes
        summary.emitted_boxes += r.n_boxes
        summary.seconds += r.seconds
        summary.fallbacks += r.n_fallbacks
        summary.flagged += r.n_flagged
    return summary
