"""Dataset assembly and the packer-fed training loop.

Scenes become one training example per query. Examples are shuffled each
epoch, packed into fixed-width rows by the stream packer, padded into
rectangular batches, and fed to Adam with warmup plus cosine decay.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .codec import AnswerItem, encode_answer
from .masks import build_packed_training_mask
from .model import (AdamState, ModelConfig, Params, TrainingDiverged,
                    adam_step, clip_global_norm, init_params, loss_and_grads,
                    lr_at)
from .packing import StreamPacker
from .scenes import (NEGATIVE_RATIO, QueryCase, SceneRecord, generate_scene,
                     query_cases, visual_tokens)
from .sequences import (IGNORE, TAG_NONE, PackedExample, TrainingExample,
                        assemble_training_example, pack_examples)
from .vocab import Vocabulary

Batch = Dict[str, np.ndarray]


@dataclass(frozen=True)
class TrainSettings:
    """Flat optimizer and batching knobs; everything else lives in ModelConfig."""

    steps: int = 2600
    row_budget: int = 128
    rows_per_batch: int = 24
    buffer_size: int = 32
    peak_lr: float = 3e-3
    warmup: int = 100
    clip_norm: float = 1.0
    seed: int = 0
    log_every: int = 50

    def __post_init__(self) -> None:
        if self.steps < 1 or self.row_budget < 1 or self.rows_per_batch < 1:
            raise ValueError("steps, row_budget, rows_per_batch must be >= 1")
        if self.peak_lr < 0:
            raise ValueError("peak_lr must be >= 0")


def reference_model_config(vocab: Vocabulary) -> ModelConfig:
    """The config the shipped experiments run; float32 keeps steps cheap."""
    return ModelConfig(vocab_size=vocab.size, d_model=64, n_layers=2,
                       n_heads=4, d_ff=256, max_positions=256,
                       dtype="float32")


# ---------------------------------------------------------------------------
# Dataset assembly
# ---------------------------------------------------------------------------

def case_example(vis_tokens: Sequence[int], case: QueryCase,
                 vocab: Vocabulary) -> TrainingExample:
    """Supervised sequence for one query: echo the query, then its boxes."""
    item = AnswerItem(query=tuple(case.tokens), boxes=tuple(case.expected),
                      negative=case.negative)
    blocks = encode_answer([item], vocab)
    return assemble_training_example(vis_tokens, case.tokens, blocks, vocab)


def scene_examples(seeds: Iterable[int], vocab: Vocabulary,
                   negative_ratio: float = NEGATIVE_RATIO
                   ) -> List[TrainingExample]:
    out: List[TrainingExample] = []
    for seed in seeds:
        scene = generate_scene(int(seed), vocab=vocab)
        vis = visual_tokens(scene, vocab)
        for case in query_cases(scene, vocab, negative_ratio):
            out.append(case_example(vis, case, vocab))
    return out


def examples_from_records(records: Iterable[SceneRecord],
                          vocab: Vocabulary) -> List[TrainingExample]:
    out: List[TrainingExample] = []
    for rec in records:
        vis = visual_tokens(rec.scene, vocab)
        out.extend(case_example(vis, q, vocab) for q in rec.queries)
    return out


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

def _pad_batch(rows: Sequence[PackedExample], width: int,
               vocab: Vocabulary) -> Batch:
    """Pad packed rows to a rectangle.

    Padding positions carry null tokens, position id 0, IGNORE targets, and
    a self-attending mask row: _masked_softmax requires every row to keep
    one visible slot, and a loss-free self-loop is the cheapest way.
    """
    b = len(rows)
    tokens = np.full((b, width), vocab.null, dtype=np.int64)
    positions = np.zeros((b, width), dtype=np.int64)
    targets = np.full((b, width), IGNORE, dtype=np.int64)
    tags = np.full((b, width), TAG_NONE, dtype=np.int8)
    mask = np.zeros((b, width, width), dtype=bool)
    for r, row in enumerate(rows):
        n = row.length
        if n > width:
            raise ValueError(f"packed row of {n} tokens exceeds width {width}")
        tokens[r, :n] = row.tokens
        positions[r, :n] = row.positions
        targets[r, :n] = row.targets
        tags[r, :n] = row.loss_tags
        mask[r, :n, :n] = build_packed_training_mask(row.layouts)
        pad = np.arange(n, width)
        mask[r, pad, pad] = True
    return {"tokens": tokens, "positions": positions, "mask": mask,
            "targets": targets, "loss_tags": tags}


def batch_stream(examples: Sequence[TrainingExample],
                 settings: TrainSettings, vocab: Vocabulary,
                 rng: np.random.Generator) -> Iterator[Batch]:
    """Endless shuffled epochs, packed into rows and grouped into batches."""
    if not examples:
        raise ValueError("nonempty dataset required")
    packer = StreamPacker(settings.row_budget, settings.buffer_size)

    def rows() -> Iterator[PackedExample]:
        while True:
            order = rng.permutation(len(examples))
            items = ((examples[i].length, examples[i]) for i in order)
            for batch in packer.pack(items):
                yield pack_examples(batch.payloads)

    row_iter = rows()
    while True:
        group = [next(row_iter) for _ in range(settings.rows_per_batch)]
        yield _pad_batch(group, settings.row_budget, vocab)


# ---------------------------------------------------------------------------
# Optimization loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepStats:
    step: int
    lr: float
    total: float
    ntp: float
    mtp: float
    grad_norm: float
    seconds: float


def train_model(examples: Sequence[TrainingExample], cfg: ModelConfig,
                settings: TrainSettings, vocab: Vocabulary,
                progress: Optional[Callable[[StepStats], None]] = None,
                params: Optional[Params] = None,
                start_step: int = 0) -> Tuple[Params, List[StepStats]]:
    """Run Adam for ``settings.steps`` steps; deterministic under the seed.

    Pass ``params`` and ``start_step`` to resume a checkpoint; the step
    counter and schedule continue, optimizer moments restart from zero.
    Raises TrainingDiverged the moment the loss stops being finite.
    """
    if params is None:
        params = init_params(cfg, settings.seed)
    state = AdamState.for_params(params)
    rng = np.random.default_rng([settings.seed, start_step])
    stream = batch_stream(examples, settings, vocab, rng)

    history: List[StepStats] = []
    for step in range(start_step, settings.steps):
        t0 = time.perf_counter()
        batch = next(stream)
        lr = lr_at(step, settings.steps, settings.peak_lr, settings.warmup)
        report, grads = loss_and_grads(params, cfg, **batch)
        if not math.isfinite(report.total):
            raise TrainingDiverged(
                f"loss {report.total} at step {step} (lr {lr:.2e})")
        grad_norm = clip_global_norm(grads, settings.clip_norm)
        adam_step(params, grads, state, lr)
        stats = StepStats(step=step, lr=lr, total=report.total,
                          ntp=report.ntp, mtp=report.mtp,
                          grad_norm=grad_norm,
                          seconds=time.perf_counter() - t0)
        history.append(stats)
        if progress and (step % settings.log_every == 0
                         or step == settings.steps - 1):
            progress(stats)
    return params, history


def write_history_csv(path: Path, history: Sequence[StepStats]) -> None:
    fields = ["step", "lr", "total", "ntp", "mtp", "grad_norm", "seconds"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in history:
            writer.writerow(asdict(row))
