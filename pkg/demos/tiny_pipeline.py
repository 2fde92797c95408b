"""End-to-end miniature: train on a few hundred scenes, compare decode modes.

This is a scaled-down version of the reference experiment (fewer scenes,
fewer steps), meant to finish in about a minute while still showing real
boxes coming out of all three decoders.

Run:  python3 demos/tiny_pipeline.py [--scenes 300] [--steps 400]
"""

import argparse
import time

import numpy as np

from boxdec.decode import CachedSession, DecodeConfig, decode
from boxdec.metrics import aggregate, run_queries
from boxdec.scenes import eval_seeds, generate_scene, visual_tokens, query_cases
from boxdec.train import (TrainSettings, reference_model_config,
                          scene_examples, train_model)
from boxdec.vocab import Vocabulary

parser = argparse.ArgumentParser()
parser.add_argument("--scenes", type=int, default=300)
parser.add_argument("--steps", type=int, default=400)
args = parser.parse_args()

vocab = Vocabulary()
cfg = reference_model_config(vocab)
examples = scene_examples(range(args.scenes), vocab)
print(f"{args.scenes} scenes -> {len(examples)} training examples")

settings = TrainSettings(steps=args.steps, peak_lr=3e-3, warmup=50,
                         seed=0, log_every=100)
t0 = time.perf_counter()
params, history = train_model(
    examples, cfg, settings, vocab,
    progress=lambda s: print(f"  step {s.step:4d} loss {s.total:.3f}"))
print(f"trained in {time.perf_counter() - t0:.0f}s "
      f"(loss {history[0].total:.2f} -> {history[-1].total:.3f})")

# Decode one held-out scene in all three modes and show the raw traces.
scene = generate_scene(next(iter(eval_seeds(1))), vocab=vocab)
case = next(c for c in query_cases(scene, vocab) if not c.negative)
prompt = [int(t) for t in visual_tokens(scene, vocab)] + list(case.tokens)
print(f"\nquery: {' '.join(vocab.surface(t) for t in case.tokens)}   "
      f"truth: {[tuple(b.corners()) for b in case.expected]}")
for mode in ("slow", "fast", "hybrid"):
    dcfg = DecodeConfig(mode=mode, greedy=True, max_new_tokens=60)
    trace = decode(CachedSession(params, cfg), prompt, vocab, dcfg,
                   np.random.default_rng(0))
    parsed = trace.parse(vocab, on_error="truncate")
    print(f"  {mode:<7} boxes={[tuple(b.corners()) for b in parsed.boxes]} "
          f"passes={trace.forward_passes} steps={trace.steps} "
          f"fallbacks={len(trace.fallbacks)}")

# And a quick score over a handful of eval scenes.
scenes = [generate_scene(s, vocab=vocab) for s in eval_seeds(20)]
for mode in ("slow", "fast"):
    dcfg = DecodeConfig(mode=mode, greedy=True, max_new_tokens=60)
    summary = aggregate(run_queries(lambda: CachedSession(params, cfg),
                                    scenes, vocab, dcfg))
    scores = summary.scores()
    print(f"{mode}: F1@0.5 {scores['F1@0.5']:.3f} "
          f"F1@0.95 {scores['F1@0.95']:.3f} "
          f"passes/box {scores['passes_per_box']:.1f}")
