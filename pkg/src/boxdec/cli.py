"""Command-line entry point tying the pipeline together.

Subcommands: gen (scene datasets), train (checkpoint + loss curve),
decode (predictions + trace), eval (metrics table), bench (mode
comparison), bench-pack (packing efficiency), inspect-mask (ASCII dump).

Every subcommand accepts ``--config FILE`` and repeated ``--set key=value``
overrides on top of it. Exit codes: 0 ok, 2 usage, 3 missing input,
4 refused overwrite, 5 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .config import RunConfig, format_config, load_run_config
from .decode import MODES, CachedSession, DecodeConfig, decode
from .masks import ascii_mask, build_mask_segments
from .metrics import QueryRecord, aggregate, run_queries
from .model import (ModelConfig, TrainingDiverged, load_checkpoint,
                    save_checkpoint)
from .packing import StreamPacker, packing_efficiency
from .scenes import (eval_seeds, read_dataset, train_seeds, visual_tokens,
                     write_dataset)
from .train import examples_from_records, train_model, write_history_csv
from .vocab import Vocabulary

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_EXISTS = 4
EXIT_DIVERGED = 5


class CliError(RuntimeError):
    def __init__(self, code: int, message: str) -> None:
        super().__init__(message)
        self.code = code


def _require_file(path: str, what: str) -> Path:
    if not path:
        raise CliError(EXIT_USAGE, f"{what} path is required")
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_MISSING, f"{what} not found: {p}")
    return p


def _refuse_overwrite(paths: Sequence[Path], force: bool) -> None:
    clashes = [str(p) for p in paths if p.exists()]
    if clashes and not force:
        raise CliError(EXIT_EXISTS,
                       "refusing to overwrite (pass --force): "
                       + ", ".join(clashes))


def _out_dir(args: argparse.Namespace, rc: RunConfig) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    env = os.environ.get("BOXDEC_OUT_DIR")
    if env:
        return Path(env)
    return Path(rc.out_dir)


def _load_config(args: argparse.Namespace) -> RunConfig:
    overrides: Dict[str, str] = {}
    for item in args.set or []:
        if "=" not in item:
            raise CliError(EXIT_USAGE, f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    path = Path(args.config) if args.config else None
    if path is not None and not path.exists():
        raise CliError(EXIT_MISSING, f"config not found: {path}")
    try:
        return load_run_config(path, overrides)
    except ValueError as err:
        raise CliError(EXIT_USAGE, str(err))


def _boxes_json(boxes) -> List[List[int]]:
    return [list(b.corners()) for b in boxes]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args: argparse.Namespace) -> int:
    rc = _load_config(args)
    out = _out_dir(args, rc)
    out.mkdir(parents=True, exist_ok=True)
    train_path = out / "train.jsonl"
    eval_path = out / "eval.jsonl"
    manifest = out / "gen.cfg"
    _refuse_overwrite([train_path, eval_path], args.force)

    vocab = Vocabulary()
    n_train = write_dataset(train_path, train_seeds(rc.train_scenes), vocab,
                            rc.negative_ratio)
    n_eval = write_dataset(eval_path, eval_seeds(rc.eval_scenes), vocab,
                           rc.negative_ratio)
    manifest.write_text(format_config(rc), encoding="utf-8")
    print(f"wrote {n_train} train scenes to {train_path}")
    print(f"wrote {n_eval} eval scenes to {eval_path}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    rc = _load_config(args)
    dataset = _require_file(args.dataset or rc.dataset, "dataset")
    out = _out_dir(args, rc)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.npz"
    csv_path = out / "loss.csv"
    _refuse_overwrite([ckpt_path, csv_path], args.force)

    vocab = Vocabulary()
    examples = examples_from_records(read_dataset(dataset), vocab)
    settings = rc.train_settings()
    cfg = rc.model_config(vocab)
    params = None
    start_step = 0
    if args.resume:
        params, cfg, meta = load_checkpoint(_require_file(args.resume,
                                                          "checkpoint"))
        start_step = int(meta.get("step", 0))
        print(f"resuming from {args.resume} at step {start_step}")

    def progress(stats) -> None:
        print(f"step {stats.step:5d}  lr {stats.lr:.2e}  "
              f"loss {stats.total:.4f} (ntp {stats.ntp:.4f} "
              f"mtp {stats.mtp:.4f})  |g| {stats.grad_norm:.2f}")

    try:
        params, history = train_model(examples, cfg, settings, vocab,
                                      progress=progress, params=params,
                                      start_step=start_step)
    except TrainingDiverged as err:
        raise CliError(EXIT_DIVERGED, f"training diverged: {err}")

    save_checkpoint(ckpt_path, params, cfg,
                    meta={"step": settings.steps,
                          "examples": len(examples),
                          "dataset": str(dataset)})
    write_history_csv(csv_path, history)
    (out / "train.cfg").write_text(format_config(rc), encoding="utf-8")
    print(f"saved checkpoint to {ckpt_path}")
    print(f"saved loss curve to {csv_path}")
    return EXIT_OK


def _decode_flags_to_config(args: argparse.Namespace,
                            rc: RunConfig) -> DecodeConfig:
    base = rc.decode_config()
    updates: Dict[str, object] = {}
    if args.mode:
        updates["mode"] = args.mode
    if args.greedy:
        updates["greedy"] = True
    if args.temperature is not None:
        updates["temperature"] = args.temperature
    if args.top_p is not None:
        updates["top_p"] = args.top_p
    if args.rep_penalty is not None:
        updates["repetition_penalty"] = args.rep_penalty
    if args.block_size is not None:
        updates["n_future"] = args.block_size
    if args.max_new_tokens is not None:
        updates["max_new_tokens"] = args.max_new_tokens
    try:
        return replace(base, **updates)
    except ValueError as err:
        raise CliError(EXIT_USAGE, str(err))


def cmd_decode(args: argparse.Namespace) -> int:
    rc = _load_config(args)
    dcfg = _decode_flags_to_config(args, rc)
    ckpt = _require_file(args.checkpoint or rc.checkpoint, "checkpoint")
    scene_path = _require_file(args.scene, "scene file")

    vocab = Vocabulary()
    params, mcfg, _ = load_checkpoint(ckpt)
    records = read_dataset(scene_path)

    out_lines: List[str] = []
    totals = {"steps": 0, "forward_passes": 0, "boxes": 0, "seconds": 0.0}
    fallback_rows: List[Dict[str, object]] = []
    for i, rec in enumerate(records):
        vis = visual_tokens(rec.scene, vocab)
        for j, case in enumerate(rec.queries):
            prompt = [int(t) for t in vis] + list(case.tokens)
            rng = np.random.default_rng([rc.seed, i, j])
            session = CachedSession(params, mcfg)
            trace = decode(session, prompt, vocab, dcfg, rng)
            parsed = trace.parse(vocab, on_error="truncate")
            out_lines.append(json.dumps({
                "seed": rec.scene.seed,
                "query": " ".join(vocab.surface(t) for t in case.tokens),
                "negative": case.negative,
                "gt_boxes": _boxes_json(case.expected),
                "pred_boxes": _boxes_json(parsed.boxes),
                "pred_negative": any(it.negative for it in parsed.items),
                "terminated": trace.terminated,
                "fallbacks": len(trace.fallbacks),
                "flagged": len(trace.flagged),
            }))
            totals["steps"] += trace.steps
            totals["forward_passes"] += trace.forward_passes
            totals["boxes"] += trace.n_boxes
            totals["seconds"] += trace.seconds
            fallback_rows.extend({"offset": f.offset, "reason": f.reason}
                                 for f in trace.fallbacks)

    Path(args.out).write_text("\n".join(out_lines) + "\n", encoding="utf-8")
    seconds = totals["seconds"]
    trace_doc = {
        "steps": totals["steps"],
        "forward_passes": totals["forward_passes"],
        "fallbacks": fallback_rows,
        "boxes": totals["boxes"],
        "seconds": seconds,
        "bps": totals["boxes"] / seconds if seconds > 0 else 0.0,
    }
    if args.trace:
        Path(args.trace).write_text(json.dumps(trace_doc, indent=2) + "\n",
                                    encoding="utf-8")
    print(f"decoded {len(out_lines)} queries -> {args.out} "
          f"({trace_doc['bps']:.2f} BPS, {len(fallback_rows)} fallbacks)")
    return EXIT_OK


def _run_mode(params, mcfg: ModelConfig, records, vocab: Vocabulary,
              dcfg: DecodeConfig, seed: int) -> List[QueryRecord]:
    scenes = [rec.scene for rec in records]
    rng = np.random.default_rng(seed)
    return run_queries(lambda: CachedSession(params, mcfg), scenes, vocab,
                       dcfg, rng)


def cmd_eval(args: argparse.Namespace) -> int:
    rc = _load_config(args)
    dcfg = _decode_flags_to_config(args, rc)
    ckpt = _require_file(args.checkpoint or rc.checkpoint, "checkpoint")
    dataset = _require_file(args.dataset or rc.eval_dataset, "dataset")

    vocab = Vocabulary()
    params, mcfg, _ = load_checkpoint(ckpt)
    records = read_dataset(dataset)
    if args.limit:
        records = records[:args.limit]
    summary = aggregate(_run_mode(params, mcfg, records, vocab, dcfg, rc.seed))
    scores = summary.scores()

    print(f"mode={dcfg.mode} queries={summary.n_queries} "
          f"boxes={summary.emitted_boxes}")
    for key in ("F1@0.5", "F1@0.95", "F1@mean", "P@mean", "R@mean",
                "negative_abstention", "passes_per_box", "BPS"):
        print(f"  {key:<20} {scores[key]:.4f}")
    print(f"  {'fallbacks':<20} {summary.fallbacks}")
    if args.out:
        Path(args.out).write_text(json.dumps(scores, indent=2) + "\n",
                                  encoding="utf-8")
        print(f"wrote report to {args.out}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    rc = _load_config(args)
    ckpt = _require_file(args.checkpoint or rc.checkpoint, "checkpoint")
    dataset = _require_file(args.dataset or rc.eval_dataset, "dataset")
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for mode in modes:
        if mode not in MODES:
            raise CliError(EXIT_USAGE, f"unknown mode {mode!r}")

    vocab = Vocabulary()
    params, mcfg, _ = load_checkpoint(ckpt)
    records = read_dataset(dataset)
    if args.limit:
        records = records[:args.limit]

    rows: List[Dict[str, object]] = []
    passes_per_box: Dict[str, float] = {}
    base = rc.decode_config()
    for mode in modes:
        # block width is pinned to 6 here so the table compares the modes
        # as shipped, whatever the config's n_future says
        dcfg = replace(base, mode=mode, greedy=not args.sampled, n_future=6)
        summary = aggregate(_run_mode(params, mcfg, records, vocab, dcfg,
                                      rc.seed))
        scores = summary.scores()
        passes_per_box[mode] = scores["passes_per_box"]
        rows.append({
            "mode": mode,
            "queries": summary.n_queries,
            "boxes": summary.emitted_boxes,
            "forward_passes": summary.forward_passes,
            "seconds": round(summary.seconds, 4),
            "bps": round(scores["BPS"], 3),
            "passes_per_box": round(scores["passes_per_box"], 3),
            "f1_at_50": round(scores["F1@0.5"], 4),
            "fallbacks": summary.fallbacks,
        })

    header = list(rows[0].keys())
    widths = {k: max(len(k), *(len(str(r[k])) for r in rows)) for k in header}
    print("  ".join(k.ljust(widths[k]) for k in header))
    for r in rows:
        print("  ".join(str(r[k]).ljust(widths[k]) for k in header))
    if "slow" in passes_per_box:
        for mode in modes:
            if mode != "slow" and passes_per_box[mode] > 0:
                ratio = passes_per_box[mode] / passes_per_box["slow"]
                print(f"passes-per-box ratio {mode}/slow: {ratio:.3f}")
    if args.out:
        with Path(args.out).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=header)
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote bench table to {args.out}")
    return EXIT_OK


def _parse_dist(spec: str):
    parts = spec.split(":")
    if len(parts) == 3 and parts[0] == "uniform":
        lo, hi = int(parts[1]), int(parts[2])
        if not (0 < lo <= hi):
            raise CliError(EXIT_USAGE, f"bad length range in {spec!r}")
        return lambda rng: int(rng.integers(lo, hi + 1))
    raise CliError(EXIT_USAGE,
                   f"unsupported distribution {spec!r}; try uniform:200:2000")


def cmd_bench_pack(args: argparse.Namespace) -> int:
    draw = _parse_dist(args.dist)
    rng = np.random.default_rng(args.seed)

    def lengths():
        while True:
            yield draw(rng)

    packer = StreamPacker(args.budget, args.buffer)
    batches = []
    for batch in packer.pack(lengths()):
        batches.append(batch)
        if len(batches) >= args.batches:
            break
    eff = packing_efficiency(batches)
    total = sum(b.total for b in batches)
    print(f"{len(batches)} batches at budget {args.budget}: "
          f"{total} tokens packed, efficiency {eff:.4f}")
    if args.out:
        with Path(args.out).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["batch", "samples", "tokens", "fill"])
            for i, b in enumerate(batches):
                writer.writerow([i, len(b.lengths), b.total,
                                 round(b.fill, 6)])
        print(f"wrote per-batch fill to {args.out}")
    return EXIT_OK


def cmd_inspect_mask(args: argparse.Namespace) -> int:
    try:
        mask = build_mask_segments(args.vis, args.q, args.ntp, args.blk,
                                   args.block_size)
    except ValueError as err:
        raise CliError(EXIT_USAGE, str(err))
    labels = (["v"] * args.vis + ["q"] * args.q + ["n"] * args.ntp
              + ["b"] * args.blk)
    print(ascii_mask(mask, labels=labels))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override one config key (repeatable)")


def _add_decode_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--mode", choices=MODES)
    sub.add_argument("--greedy", action="store_true")
    sub.add_argument("--temperature", type=float)
    sub.add_argument("--top-p", dest="top_p", type=float)
    sub.add_argument("--rep-penalty", dest="rep_penalty", type=float)
    sub.add_argument("--block-size", dest="block_size", type=int)
    sub.add_argument("--max-new-tokens", dest="max_new_tokens", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boxdec",
        description="Train and run the parallel box decoder pipeline.")
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("gen", help="generate scene datasets")
    _add_common(gen)
    gen.add_argument("--out", help="output directory")
    gen.add_argument("--force", action="store_true")
    gen.set_defaults(func=cmd_gen)

    train = subs.add_parser("train", help="train a checkpoint")
    _add_common(train)
    train.add_argument("--dataset", help="training scenes JSONL")
    train.add_argument("--out", help="output directory")
    train.add_argument("--resume", help="checkpoint to continue from")
    train.add_argument("--force", action="store_true")
    train.set_defaults(func=cmd_train)

    dec = subs.add_parser("decode", help="decode scene queries")
    _add_common(dec)
    _add_decode_flags(dec)
    dec.add_argument("--checkpoint")
    dec.add_argument("--scene", required=True, help="scenes JSONL")
    dec.add_argument("--out", required=True, help="predictions JSONL")
    dec.add_argument("--trace", help="trace JSON output")
    dec.set_defaults(func=cmd_decode)

    ev = subs.add_parser("eval", help="score a checkpoint on a dataset")
    _add_common(ev)
    _add_decode_flags(ev)
    ev.add_argument("--checkpoint")
    ev.add_argument("--dataset")
    ev.add_argument("--limit", type=int)
    ev.add_argument("--out", help="metrics JSON output")
    ev.set_defaults(func=cmd_eval)

    bench = subs.add_parser("bench", help="compare decode modes")
    _add_common(bench)
    bench.add_argument("--modes", default="slow,fast,hybrid")
    bench.add_argument("--checkpoint")
    bench.add_argument("--dataset")
    bench.add_argument("--limit", type=int)
    bench.add_argument("--sampled", action="store_true",
                       help="sample instead of greedy decoding")
    bench.add_argument("--out", help="CSV output")
    bench.set_defaults(func=cmd_bench)

    bp = subs.add_parser("bench-pack", help="measure packing efficiency")
    bp.add_argument("--budget", type=int, default=36_864)
    bp.add_argument("--buffer", type=int, default=32)
    bp.add_argument("--dist", default="uniform:200:2000")
    bp.add_argument("--batches", type=int, default=1000)
    bp.add_argument("--seed", type=int, default=0)
    bp.add_argument("--out", help="CSV output")
    bp.set_defaults(func=cmd_bench_pack)

    im = subs.add_parser("inspect-mask", help="print a training mask")
    im.add_argument("--vis", type=int, default=2)
    im.add_argument("--q", type=int, default=1)
    im.add_argument("--ntp", type=int, default=6)
    im.add_argument("--blk", type=int, default=12)
    im.add_argument("--block-size", dest="block_size", type=int, default=6)
    im.set_defaults(func=cmd_inspect_mask)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
