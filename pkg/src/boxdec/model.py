"""A small pre-norm transformer in plain numpy with hand-written backprop.

Two forward entry points share all weights:

    forward(...)         whole sequences with an explicit attention mask,
                         used for training and for the no-cache decode oracle
    forward_rows(...)    a handful of new rows against a KVCache, used by the
                         incremental decoders

Backprop is written out module by module and is validated against central
finite differences (see gradient_check). Everything is float64 by default;
the dtype is configurable but the gradient check always runs in float64.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .sequences import IGNORE, TAG_BOTH, TAG_MTP, TAG_NTP

Params = Dict[str, np.ndarray]
Grads = Dict[str, np.ndarray]

_GELU_C = math.sqrt(2.0 / math.pi)
_LN_EPS = 1e-5


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; training must stop loudly, not limp on."""


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_positions: int = 1024
    dtype: str = "float64"

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads:
            raise ValueError("d_model must divide evenly into heads")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"unsupported dtype {self.dtype}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)


def init_params(cfg: ModelConfig, seed: int = 0) -> Params:
    rng = np.random.default_rng(seed)
    dt = cfg.np_dtype

    def normal(*shape):
        return (rng.standard_normal(shape) * 0.02).astype(dt)

    def zeros(*shape):
        return np.zeros(shape, dtype=dt)

    def ones(*shape):
        return np.ones(shape, dtype=dt)

    p: Params = {
        "tok_emb": normal(cfg.vocab_size, cfg.d_model),
        "pos_emb": normal(cfg.max_positions, cfg.d_model),
        "lnf.g": ones(cfg.d_model),
        "lnf.b": zeros(cfg.d_model),
        "w_out": normal(cfg.d_model, cfg.vocab_size),
        "b_out": zeros(cfg.vocab_size),
    }
    for i in range(cfg.n_layers):
        p[f"l{i}.ln1.g"] = ones(cfg.d_model)
        p[f"l{i}.ln1.b"] = zeros(cfg.d_model)
        p[f"l{i}.wq"] = normal(cfg.d_model, cfg.d_model)
        p[f"l{i}.bq"] = zeros(cfg.d_model)
        p[f"l{i}.wk"] = normal(cfg.d_model, cfg.d_model)
        p[f"l{i}.bk"] = zeros(cfg.d_model)
        p[f"l{i}.wv"] = normal(cfg.d_model, cfg.d_model)
        p[f"l{i}.bv"] = zeros(cfg.d_model)
        p[f"l{i}.wo"] = normal(cfg.d_model, cfg.d_model)
        p[f"l{i}.bo"] = zeros(cfg.d_model)
        p[f"l{i}.ln2.g"] = ones(cfg.d_model)
        p[f"l{i}.ln2.b"] = zeros(cfg.d_model)
        p[f"l{i}.w1"] = normal(cfg.d_model, cfg.d_ff)
        p[f"l{i}.b1"] = zeros(cfg.d_ff)
        p[f"l{i}.w2"] = normal(cfg.d_ff, cfg.d_model)
        p[f"l{i}.b2"] = zeros(cfg.d_model)
    return p


# ---------------------------------------------------------------------------
# Primitive ops (forward + backward pairs)
# ---------------------------------------------------------------------------

def _tanh_fast(u: np.ndarray) -> np.ndarray:
    # exp-based tanh: one vectorized exp instead of libm's scalar tanh.
    # Saturated inputs are clipped first; tanh(20) is 1.0 to 17 digits.
    u = np.clip(u, -20.0, 20.0)
    e = np.exp(2.0 * u)
    return (e - 1.0) / (e + 1.0)


def _gelu_fwd(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """GELU (tanh form); also returns tanh(u) for reuse in the backward pass."""
    t = _tanh_fast(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def _gelu(x: np.ndarray) -> np.ndarray:
    return _gelu_fwd(x)[0]


def _gelu_grad(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    du = _GELU_C * (1.0 + 3 * 0.044715 * (x * x))
    return 0.5 * (1.0 + t) + 0.5 * x * ((1.0 - t * t) * du)


def _ln_forward(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    ivar = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * ivar
    return xhat * g + b, (xhat, ivar, g)


def _ln_backward(dy: np.ndarray, tape) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, ivar, g = tape
    d = xhat.shape[-1]
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = ivar / d * (
        d * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _additive_mask(mask: np.ndarray, dtype: np.dtype) -> np.ndarray:
    """Boolean mask to 0 / -1e30 addend; exp then vanishes exactly."""
    out = np.zeros(mask.shape, dtype=dtype)
    out[~mask] = -1e30
    return out


def _masked_softmax(scores: np.ndarray, add_mask: np.ndarray) -> np.ndarray:
    # Masked slots carry -1e30 and underflow to exactly 0 after the shifted
    # exp, provided each row keeps at least one unmasked slot (batch padding
    # rows self-attend by construction, see train._pad_batch). Works in
    # place: callers never reuse raw scores.
    scores += add_mask
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    return scores


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * hd)


# ---------------------------------------------------------------------------
# Whole-sequence forward/backward
# ---------------------------------------------------------------------------

def forward(params: Params, cfg: ModelConfig, tokens: np.ndarray,
            positions: np.ndarray, mask: np.ndarray,
            want_tape: bool = False):
    """Logits for full sequences.

    Args:
        tokens, positions: int arrays [B, T] (or [T], auto-batched).
        mask: bool [T, T] or [B, T, T]; True = may attend.
    Returns:
        logits [B, T, V], and the backprop tape when requested.
    """
    squeeze = tokens.ndim == 1
    if squeeze:
        tokens = tokens[None, :]
        positions = positions[None, :]
    if mask.ndim == 2:
        mask = np.broadcast_to(mask, (tokens.shape[0],) + mask.shape)
    bmask = _additive_mask(mask, cfg.np_dtype)[:, None, :, :]

    x = params["tok_emb"][tokens] + params["pos_emb"][positions]
    scale = 1.0 / math.sqrt(cfg.head_dim)
    tape: Dict[str, object] = {"tokens": tokens, "positions": positions}

    for i in range(cfg.n_layers):
        pre = f"l{i}."
        y1, ln1_tape = _ln_forward(x, params[pre + "ln1.g"], params[pre + "ln1.b"])
        q = y1 @ params[pre + "wq"] + params[pre + "bq"]
        k = y1 @ params[pre + "wk"] + params[pre + "bk"]
        v = y1 @ params[pre + "wv"] + params[pre + "bv"]
        qh, kh, vh = (_split_heads(z, cfg.n_heads) for z in (q, k, v))
        scores = (qh @ kh.swapaxes(-1, -2)) * scale
        probs = _masked_softmax(scores, bmask)
        ctx = _merge_heads(probs @ vh)
        attn = ctx @ params[pre + "wo"] + params[pre + "bo"]
        x1 = x + attn

        y2, ln2_tape = _ln_forward(x1, params[pre + "ln2.g"], params[pre + "ln2.b"])
        a = y2 @ params[pre + "w1"] + params[pre + "b1"]
        h, t_act = _gelu_fwd(a)
        f = h @ params[pre + "w2"] + params[pre + "b2"]
        x2 = x1 + f

        if want_tape:
            tape[pre] = (x, y1, ln1_tape, qh, kh, vh, probs, ctx, x1, y2,
                         ln2_tape, a, t_act, h)
        x = x2

    yf, lnf_tape = _ln_forward(x, params["lnf.g"], params["lnf.b"])
    logits = yf @ params["w_out"] + params["b_out"]
    if want_tape:
        tape["final"] = (x, yf, lnf_tape)
        return (logits[0], tape) if squeeze else (logits, tape)
    return logits[0] if squeeze else logits


def backward(params: Params, cfg: ModelConfig, tape: Dict[str, object],
             dlogits: np.ndarray) -> Grads:
    """Gradients for every parameter given d(loss)/d(logits)."""
    if dlogits.ndim == 2:
        dlogits = dlogits[None, :, :]
    grads: Grads = {}
    x_last, yf, lnf_tape = tape["final"]
    scale = 1.0 / math.sqrt(cfg.head_dim)
    d_model = cfg.d_model

    def mm_grad(inp: np.ndarray, dout: np.ndarray) -> np.ndarray:
        # weight gradient of inp @ w as one flat GEMM
        return inp.reshape(-1, inp.shape[-1]).T @ dout.reshape(-1, dout.shape[-1])

    grads["w_out"] = mm_grad(yf, dlogits)
    grads["b_out"] = dlogits.sum(axis=(0, 1))
    dyf = dlogits @ params["w_out"].T
    dx, grads["lnf.g"], grads["lnf.b"] = _ln_backward(dyf, lnf_tape)

    for i in reversed(range(cfg.n_layers)):
        pre = f"l{i}."
        (x_in, y1, ln1_tape, qh, kh, vh, probs, ctx, x1, y2,
         ln2_tape, a, t_act, h) = tape[pre]

        # FFN branch: x2 = x1 + w2(gelu(w1 ln2(x1)))
        df = dx
        grads[pre + "w2"] = mm_grad(h, df)
        grads[pre + "b2"] = df.sum(axis=(0, 1))
        dh = df @ params[pre + "w2"].T
        da = dh * _gelu_grad(a, t_act)
        grads[pre + "w1"] = mm_grad(y2, da)
        grads[pre + "b1"] = da.sum(axis=(0, 1))
        dy2 = da @ params[pre + "w1"].T
        dx1, grads[pre + "ln2.g"], grads[pre + "ln2.b"] = _ln_backward(dy2, ln2_tape)
        dx1 = dx1 + dx

        # Attention branch: x1 = x + wo(softmax(qk)v)
        dattn = dx1
        grads[pre + "wo"] = mm_grad(ctx, dattn)
        grads[pre + "bo"] = dattn.sum(axis=(0, 1))
        dctx = _split_heads(dattn @ params[pre + "wo"].T, cfg.n_heads)
        dprobs = dctx @ vh.swapaxes(-1, -2)
        dvh = probs.swapaxes(-1, -2) @ dctx
        dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
        dscores *= scale
        dqh = dscores @ kh
        dkh = dscores.swapaxes(-1, -2) @ qh
        dq, dk, dv = (_merge_heads(z) for z in (dqh, dkh, dvh))
        grads[pre + "wq"] = mm_grad(y1, dq)
        grads[pre + "bq"] = dq.sum(axis=(0, 1))
        grads[pre + "wk"] = mm_grad(y1, dk)
        grads[pre + "bk"] = dk.sum(axis=(0, 1))
        grads[pre + "wv"] = mm_grad(y1, dv)
        grads[pre + "bv"] = dv.sum(axis=(0, 1))
        dy1 = dq @ params[pre + "wq"].T + dk @ params[pre + "wk"].T \
            + dv @ params[pre + "wv"].T
        dx0, grads[pre + "ln1.g"], grads[pre + "ln1.b"] = _ln_backward(dy1, ln1_tape)
        dx = dx0 + dx1

    tokens = tape["tokens"]
    positions = tape["positions"]
    grads["tok_emb"] = np.zeros_like(params["tok_emb"])
    np.add.at(grads["tok_emb"], tokens.reshape(-1),
              dx.reshape(-1, cfg.d_model))
    grads["pos_emb"] = np.zeros_like(params["pos_emb"])
    np.add.at(grads["pos_emb"], positions.reshape(-1),
              dx.reshape(-1, cfg.d_model))
    return grads


# ---------------------------------------------------------------------------
# Joint loss
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossReport:
    total: float
    ntp: float
    mtp: float
    n_ntp: int
    n_mtp: int


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def joint_loss(logits: np.ndarray, targets: np.ndarray,
               loss_tags: np.ndarray,
               want_dlogits: bool = False):
    """Sum of the two stream means; each stream averages its own positions.

    Positions tagged BOTH contribute the same CE term to both means.
    """
    flat_logits = logits.reshape(-1, logits.shape[-1])
    flat_t = targets.reshape(-1)
    flat_tag = loss_tags.reshape(-1)

    in_ntp = (flat_tag == TAG_NTP) | (flat_tag == TAG_BOTH)
    in_mtp = (flat_tag == TAG_MTP) | (flat_tag == TAG_BOTH)
    scored = in_ntp | in_mtp
    if (flat_t[scored] == IGNORE).any():
        raise ValueError("scored position carries IGNORE target")

    idx = np.flatnonzero(scored)
    lp = _log_softmax(flat_logits[idx])
    ce = -lp[np.arange(len(idx)), flat_t[idx]]

    n_ntp = int(in_ntp.sum())
    n_mtp = int(in_mtp.sum())
    l_ntp = float(ce[in_ntp[idx]].sum() / n_ntp) if n_ntp else 0.0
    l_mtp = float(ce[in_mtp[idx]].sum() / n_mtp) if n_mtp else 0.0
    report = LossReport(total=l_ntp + l_mtp, ntp=l_ntp, mtp=l_mtp,
                        n_ntp=n_ntp, n_mtp=n_mtp)
    if not want_dlogits:
        return report

    dlogits = np.zeros_like(flat_logits)
    if len(idx):
        probs = np.exp(lp)
        weights = np.zeros(len(idx))
        if n_ntp:
            weights += in_ntp[idx] / n_ntp
        if n_mtp:
            weights += in_mtp[idx] / n_mtp
        d = probs
        d[np.arange(len(idx)), flat_t[idx]] -= 1.0
        dlogits[idx] = d * weights[:, None]
    return report, dlogits.reshape(logits.shape)


def loss_and_grads(params: Params, cfg: ModelConfig, tokens: np.ndarray,
                   positions: np.ndarray, mask: np.ndarray,
                   targets: np.ndarray, loss_tags: np.ndarray
                   ) -> Tuple[LossReport, Grads]:
    logits, tape = forward(params, cfg, tokens, positions, mask, want_tape=True)
    report, dlogits = joint_loss(logits, targets, loss_tags, want_dlogits=True)
    grads = backward(params, cfg, tape, dlogits)
    return report, grads


def batch_loss(params: Params, cfg: ModelConfig, tokens: np.ndarray,
               positions: np.ndarray, mask: np.ndarray, targets: np.ndarray,
               loss_tags: np.ndarray) -> LossReport:
    logits = forward(params, cfg, tokens, positions, mask)
    return joint_loss(logits, targets, loss_tags)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: Params) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def clip_global_norm(grads: Grads, max_norm: float) -> float:
    total = math.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
    if total > max_norm and total > 0:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


def adam_step(params: Params, grads: Grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    state.step += 1
    t = state.step
    for key, p in params.items():
        g = grads[key]
        m = state.m[key]
        v = state.v[key]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p -= lr * mhat / (np.sqrt(vhat) + eps)


def lr_at(step: int, total_steps: int, peak: float, warmup: int) -> float:
    """Linear warmup to ``peak`` then cosine decay to zero."""
    if warmup > 0 and step < warmup:
        return peak * (step + 1) / warmup
    if total_steps <= warmup:
        return peak
    t = (step - warmup) / max(1, total_steps - warmup)
    return peak * 0.5 * (1.0 + math.cos(math.pi * min(t, 1.0)))


# ---------------------------------------------------------------------------
# Incremental forward against a KV cache
# ---------------------------------------------------------------------------

class KVCache:
    """Per-layer key/value store for committed tokens only.

    Rows are appended after each decode pass; rows belonging to speculative
    mask slots are never stored. ``truncate`` supports rolling back to a
    verified prefix.
    """

    def __init__(self, cfg: ModelConfig) -> None:
        self._k: List[np.ndarray] = [
            np.zeros((0, cfg.n_heads, cfg.head_dim), dtype=cfg.np_dtype)
            for _ in range(cfg.n_layers)
        ]
        self._v = [a.copy() for a in self._k]

    @property
    def length(self) -> int:
        return int(self._k[0].shape[0])

    def view(self, layer: int) -> Tuple[np.ndarray, np.ndarray]:
        return self._k[layer], self._v[layer]

    def append(self, layer: int, k: np.ndarray, v: np.ndarray) -> None:
        self._k[layer] = np.concatenate([self._k[layer], k], axis=0)
        self._v[layer] = np.concatenate([self._v[layer], v], axis=0)

    def truncate(self, new_length: int) -> None:
        if not (0 <= new_length <= self.length):
            raise ValueError(
                f"cannot truncate cache of {self.length} to {new_length}")
        self._k = [k[:new_length] for k in self._k]
        self._v = [v[:new_length] for v in self._v]


def forward_rows(params: Params, cfg: ModelConfig, cache: KVCache,
                 tokens: Sequence[int], positions: Sequence[int],
                 row_mask: np.ndarray, append_rows: np.ndarray) -> np.ndarray:
    """Run ``n`` new rows against the cache; returns their logits [n, V].

    Every row sees the full cached prefix. ``row_mask[i, j]`` gates row i
    attending to row j within this pass. Rows flagged in ``append_rows``
    have their K/V appended to the cache (in row order); the rest are
    computed and dropped.
    """
    n = len(tokens)
    if row_mask.shape != (n, n) or append_rows.shape != (n,):
        raise ValueError("row_mask must be [n, n] and append_rows [n]")
    tokens = np.asarray(tokens, dtype=np.int64)
    positions = np.asarray(positions, dtype=np.int64)
    x = params["tok_emb"][tokens] + params["pos_emb"][positions]
    scale = 1.0 / math.sqrt(cfg.head_dim)

    for i in range(cfg.n_layers):
        pre = f"l{i}."
        y1, _ = _ln_forward(x, params[pre + "ln1.g"], params[pre + "ln1.b"])
        q = y1 @ params[pre + "wq"] + params[pre + "bq"]
        k = y1 @ params[pre + "wk"] + params[pre + "bk"]
        v = y1 @ params[pre + "wv"] + params[pre + "bv"]
        qh = q.reshape(n, cfg.n_heads, cfg.head_dim)
        kh = k.reshape(n, cfg.n_heads, cfg.head_dim)
        vh = v.reshape(n, cfg.n_heads, cfg.head_dim)

        ck, cv = cache.view(i)
        keys = np.concatenate([ck, kh], axis=0)      # [L+n, H, hd]
        vals = np.concatenate([cv, vh], axis=0)
        full_mask = np.concatenate(
            [np.ones((n, ck.shape[0]), dtype=bool), row_mask], axis=1)
        add = _additive_mask(full_mask, cfg.np_dtype)

        scores = (qh.transpose(1, 0, 2) @ keys.transpose(1, 2, 0)) * scale
        probs = _masked_softmax(scores, add[None, :, :])     # [H, n, L+n]
        ctx = (probs @ vals.transpose(1, 0, 2)).transpose(1, 0, 2)
        attn = ctx.reshape(n, cfg.d_model) @ params[pre + "wo"] + params[pre + "bo"]
        x1 = x + attn

        y2, _ = _ln_forward(x1, params[pre + "ln2.g"], params[pre + "ln2.b"])
        f = _gelu(y2 @ params[pre + "w1"] + params[pre + "b1"]) \
            @ params[pre + "w2"] + params[pre + "b2"]
        x = x1 + f

        if append_rows.any():
            cache.append(i, kh[append_rows], vh[append_rows])

    yf, _ = _ln_forward(x, params["lnf.g"], params["lnf.b"])
    return yf @ params["w_out"] + params["b_out"]


# ---------------------------------------------------------------------------
# Gradient checking and checkpoints
# ---------------------------------------------------------------------------

def gradient_check(params: Params, cfg: ModelConfig, tokens: np.ndarray,
                   positions: np.ndarray, mask: np.ndarray,
                   targets: np.ndarray, loss_tags: np.ndarray,
                   n_samples: int = 100, seed: int = 0,
                   step: float = 1e-4) -> List[float]:
    """Relative error between analytic and central-difference gradients.

    Samples ``n_samples`` individual weights uniformly across all tensors.
    """
    if cfg.np_dtype != np.float64:
        raise ValueError("gradient check requires float64")
    _, grads = loss_and_grads(params, cfg, tokens, positions, mask,
                              targets, loss_tags)
    rng = np.random.default_rng(seed)
    keys = sorted(params)
    sizes = np.array([params[k].size for k in keys])
    cum = np.cumsum(sizes)
    errors: List[float] = []
    for flat in rng.integers(0, cum[-1], size=n_samples):
        ki = int(np.searchsorted(cum, flat, side="right"))
        offset = int(flat - (cum[ki - 1] if ki else 0))
        key = keys[ki]
        orig = params[key].flat[offset]
        params[key].flat[offset] = orig + step
        lp = batch_loss(params, cfg, tokens, positions, mask, targets,
                        loss_tags).total
        params[key].flat[offset] = orig - step
        lm = batch_loss(params, cfg, tokens, positions, mask, targets,
                        loss_tags).total
        params[key].flat[offset] = orig
        fd = (lp - lm) / (2 * step)
        an = float(grads[key].flat[offset])
        errors.append(abs(an - fd) / max(abs(an), abs(fd), 1e-10)
                      if (an or fd) else 0.0)
    return errors


def save_checkpoint(path: Path, params: Params, cfg: ModelConfig,
                    meta: Optional[dict] = None) -> None:
    payload = {f"param.{k}": v for k, v in params.items()}
    payload["config_json"] = np.frombuffer(
        json.dumps(asdict(cfg)).encode(), dtype=np.uint8)
    payload["meta_json"] = np.frombuffer(
        json.dumps(meta or {}).encode(), dtype=np.uint8)
    np.savez_compressed(path, **payload)


def load_checkpoint(path: Path) -> Tuple[Params, ModelConfig, dict]:
    with np.load(path) as data:
        cfg = ModelConfig(**json.loads(bytes(data["config_json"]).decode()))
        meta = json.loads(bytes(data["meta_json"]).decode())
        params = {k[len("param."):]: data[k].copy() for k in data.files
                  if k.startswith("param.")}
    return params, cfg, meta
