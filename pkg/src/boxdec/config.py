"""Run configuration: one flat namespace, loadable from key=value files.

The file format is deliberately dumb: one ``key = value`` per line, ``#``
comments, blank lines ignored. Every key mirrors a RunConfig field and the
formatter/parser pair roundtrips exactly, so experiment manifests can be
checked into a repo and replayed.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, Mapping, Optional

from .decode import DecodeConfig
from .model import ModelConfig
from .train import TrainSettings
from .vocab import Vocabulary

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


@dataclass(frozen=True)
class RunConfig:
    # paths
    out_dir: str = "runs/default"
    dataset: str = ""
    eval_dataset: str = ""
    checkpoint: str = ""
    # scene generation
    train_scenes: int = 10_000
    eval_scenes: int = 500
    negative_ratio: float = 0.25
    # model dimensions
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_positions: int = 256
    dtype: str = "float32"
    # optimization
    steps: int = 2600
    row_budget: int = 128
    rows_per_batch: int = 24
    buffer_size: int = 32
    peak_lr: float = 3e-3
    warmup: int = 100
    clip_norm: float = 1.0
    log_every: int = 50
    # decoding
    mode: str = "hybrid"
    greedy: bool = False
    temperature: float = 0.7
    top_p: float = 0.9
    repetition_penalty: float = 1.1
    n_future: int = 6
    max_new_tokens: int = 8192
    trigger_prob_threshold: float = 0.7
    trigger_spread_threshold: float = 80.0
    # shared
    seed: int = 0

    def model_config(self, vocab: Vocabulary) -> ModelConfig:
        return ModelConfig(vocab_size=vocab.size, d_model=self.d_model,
                           n_layers=self.n_layers, n_heads=self.n_heads,
                           d_ff=self.d_ff, max_positions=self.max_positions,
                           dtype=self.dtype)

    def train_settings(self) -> TrainSettings:
        return TrainSettings(steps=self.steps, row_budget=self.row_budget,
                             rows_per_batch=self.rows_per_batch,
                             buffer_size=self.buffer_size,
                             peak_lr=self.peak_lr, warmup=self.warmup,
                             clip_norm=self.clip_norm, seed=self.seed,
                             log_every=self.log_every)

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(mode=self.mode, temperature=self.temperature,
                            top_p=self.top_p,
                            repetition_penalty=self.repetition_penalty,
                            n_future=self.n_future,
                            max_new_tokens=self.max_new_tokens,
                            trigger_prob_threshold=self.trigger_prob_threshold,
                            trigger_spread_threshold=self.trigger_spread_threshold,
                            greedy=self.greedy)


_FIELD_TYPES = {f.name: type(getattr(RunConfig(), f.name))
                for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    typ = _FIELD_TYPES[key]
    raw = raw.strip()
    if typ is bool:
        lowered = raw.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError:
        raise ValueError(f"{key}: expected {typ.__name__}, got {raw!r}")


def parse_config_text(text: str) -> Dict[str, object]:
    """Key=value lines to typed values; unknown keys are an error."""
    out: Dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        out[key] = _parse_value(key, raw)
    return out


def format_config(cfg: RunConfig) -> str:
    lines = [f"{key} = {value}" for key, value in asdict(cfg).items()]
    return "\n".join(lines) + "\n"


def load_run_config(path: Optional[Path] = None,
                    overrides: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Defaults, then the file (if any), then command-line overrides."""
    values: Dict[str, object] = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    for key, raw in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = raw if not isinstance(raw, str) else _parse_value(key, raw)
    return RunConfig(**values)
