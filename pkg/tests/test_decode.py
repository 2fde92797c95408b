"""Decode loops: sampling chain, ambiguity trigger, pipelined schedule,
hybrid fallback, and cache soundness on small random models."""

import numpy as np
import pytest

from boxdec.codec import BLOCK_LEN
from boxdec.decode import (CachedSession, DecodeConfig, UncachedSession,
                           ambiguity_trigger, decode, decode_fast,
                           decode_hybrid, decode_slow, sample_token)
from boxdec.model import ModelConfig, init_params
from boxdec.vocab import N_COORD_TOKENS, QuantBox


GREEDY = DecodeConfig(greedy=True)


def onehot(vocab, tok, value=12.0):
    z = np.zeros(vocab.size)
    z[tok] = value
    return z


# ---------------------------------------------------------------------------
# sampling chain


class TestSampling:
    def test_greedy_is_pure_argmax(self):
        logits = np.array([2.0, 1.0, 0.5])
        # Huge penalty on the winning token would evict it if greedy
        # applied the chain; greedy must ignore history entirely.
        cfg = DecodeConfig(greedy=True, repetition_penalty=100.0)
        assert sample_token(logits, [0, 0, 0], cfg, None) == 0

    def test_sampled_requires_rng(self):
        with pytest.raises(ValueError):
            sample_token(np.zeros(4), [], DecodeConfig(), None)

    def test_identity_config_is_exact_softmax(self):
        # temperature 1, top_p 1, penalty 1 reduces to plain softmax
        # sampling; a chi-square test over many draws should not reject.
        from scipy import stats

        probs = np.array([0.40, 0.25, 0.18, 0.10, 0.07])
        logits = np.log(probs)
        cfg = DecodeConfig(temperature=1.0, top_p=1.0, repetition_penalty=1.0)
        rng = np.random.default_rng(123)
        n = 100_000
        counts = np.bincount(
            [sample_token(logits, [], cfg, rng) for _ in range(n)],
            minlength=5)
        p_value = stats.chisquare(counts, probs * n).pvalue
        assert p_value > 1e-3

    def test_repetition_penalty_flips_argmax(self):
        # A history token that leads by less than the penalty effect
        # loses the top spot: 1.05 / 1.1 < 1.0.
        rng = np.random.default_rng(0)
        logits = np.array([1.05, 1.0, -8.0])
        cfg = DecodeConfig(temperature=0.01, top_p=0.5,
                           repetition_penalty=1.1)
        assert sample_token(logits, [], cfg, rng) == 0
        assert sample_token(logits, [0], cfg, rng) == 1

    def test_penalty_multiplies_negative_logits(self):
        rng = np.random.default_rng(1)
        logits = np.array([-1.0, -1.2])
        cfg = DecodeConfig(temperature=0.01, top_p=0.5,
                           repetition_penalty=1.5)
        # -1.0 * 1.5 = -1.5 drops below -1.2.
        assert sample_token(logits, [0], cfg, rng) == 1

    def test_nucleus_truncates_tail(self):
        probs = np.array([0.5, 0.3, 0.2])
        logits = np.log(probs)
        cfg = DecodeConfig(temperature=1.0, top_p=0.6,
                           repetition_penalty=1.0)
        rng = np.random.default_rng(2)
        draws = {sample_token(logits, [], cfg, rng) for _ in range(300)}
        assert 2 not in draws
        assert draws == {0, 1}

    def test_nucleus_keeps_at_least_one(self):
        logits = np.array([5.0, 0.0, 0.0])
        cfg = DecodeConfig(temperature=1.0, top_p=0.01,
                           repetition_penalty=1.0)
        rng = np.random.default_rng(3)
        assert sample_token(logits, [], cfg, rng) == 0

    def test_config_invariants(self):
        with pytest.raises(ValueError):
            DecodeConfig(temperature=0.0)
        DecodeConfig(temperature=0.0, greedy=True)  # allowed when greedy
        with pytest.raises(ValueError):
            DecodeConfig(top_p=0.0)
        with pytest.raises(ValueError):
            DecodeConfig(top_p=1.2)
        with pytest.raises(ValueError):
            DecodeConfig(n_future=0)
        with pytest.raises(ValueError):
            DecodeConfig(mode="eager")


# ---------------------------------------------------------------------------
# ambiguity trigger


def coord_logits(weights):
    """Length-1001 coordinate logit vector from a value -> prob map."""
    z = np.full(N_COORD_TOKENS, -40.0)
    for value, p in weights.items():
        z[value] = np.log(p)
    return z


class TestAmbiguityTrigger:
    def test_low_prob_wide_spread_fires(self):
        # top-1 prob 0.65 over tokens {450,455,460,530,535}: spread 85.
        z = coord_logits({450: 0.65, 455: 0.12, 460: 0.10,
                          530: 0.07, 535: 0.06})
        assert ambiguity_trigger(z)

    def test_confident_top1_never_fires(self):
        z = coord_logits({100: 0.90, 900: 0.05, 0: 0.02,
                          500: 0.02, 700: 0.01})
        assert not ambiguity_trigger(z)

    def test_tight_spread_never_fires(self):
        z = coord_logits({500: 0.50, 501: 0.20, 502: 0.15,
                          503: 0.10, 504: 0.05})
        assert not ambiguity_trigger(z)

    def test_spread_threshold_is_strict(self):
        # All five top tokens controlled; spread exactly 80 must not fire.
        z = coord_logits({300: 0.31, 380: 0.31, 301: 0.13,
                          302: 0.13, 303: 0.12})
        assert not ambiguity_trigger(z)
        assert ambiguity_trigger(z, spread_threshold=79.0)

    def test_bimodal_120_apart_fires(self):
        # Two modes 120 apart with top-1 prob 0.55.
        z = coord_logits({440: 0.55, 560: 0.41, 441: 0.02,
                          559: 0.01, 500: 0.01})
        assert ambiguity_trigger(z)

    def test_short_vector_rejected(self):
        with pytest.raises(ValueError):
            ambiguity_trigger(np.zeros(4))


# ---------------------------------------------------------------------------
# scripted sessions for schedule and fallback behaviour


class ScriptedSession:
    """Replays pre-computed logits; mimics the commit accounting."""

    capacity = 10**9

    def __init__(self, prompt_logits, step_logits):
        self.prompt_logits = prompt_logits
        self.queue = list(step_logits)
        self.passes = 0
        self._committed = 0
        self.truncate_calls = []

    @property
    def committed(self):
        return self._committed

    def prompt(self, tokens):
        self.passes += 1
        self._committed += len(tokens)
        return self.prompt_logits

    def step(self, tokens, row_mask, append):
        self.passes += 1
        out = self.queue.pop(0)
        assert out.shape[0] == len(tokens), (
            f"script expected {out.shape[0]} rows, loop sent {len(tokens)}")
        self._committed += int(np.sum(append))
        return out

    def truncate(self, length):
        self.truncate_calls.append((length, self._committed))
        if length > self._committed:
            raise AssertionError("truncate beyond committed")
        self._committed = length


def rows(vocab, toks):
    return np.stack([onehot(vocab, t) for t in toks])


def semantic_rows(vocab, word_id):
    # Placeholder-row outputs for [<ref> word </ref> null null null]; the
    # opener-position row (index 0) is never consumed.
    return rows(vocab, [0, word_id, vocab.ref_close,
                        vocab.null, vocab.null, vocab.null])


def end_rows(vocab):
    return rows(vocab, [0] + [vocab.null] * 5)


class TestHybridFallback:
    def test_grammar_fault_recovers_with_one_fallback(self, vocab):
        cat = vocab.word_id("cat")
        # Pass plan: prompt -> semantic block (placeholder-only pass),
        # then a 12-row pass whose placeholder rows propose an inverted
        # box (x2 < x1), then six single-row retry feeds, then the end
        # block's placeholder-only pass.
        bad_box = rows(vocab, [0, 0, 0, 0, 0, vocab.box_open])  # commit rows
        bad_box = np.concatenate([bad_box, rows(
            vocab, [0, 500, 500, 400, 600, vocab.box_close])])
        feeds = [rows(vocab, [t]) for t in
                 [100, 200, 300, 400, vocab.box_close, vocab.end]]
        script = [semantic_rows(vocab, cat), bad_box, *feeds, end_rows(vocab)]
        session = ScriptedSession(onehot(vocab, vocab.ref_open), script)

        trace = decode_hybrid(session, [vocab.cell_empty] * 4, vocab, GREEDY)

        assert len(trace.fallbacks) == 1
        assert trace.fallbacks[0].offset == 6
        assert trace.fallbacks[0].reason.startswith("FormatViolation")
        assert trace.flagged == ()
        assert trace.terminated
        parsed = trace.parse(vocab, on_error="raise")
        assert parsed.terminated
        assert len(parsed.items) == 1
        assert parsed.items[0].boxes == (QuantBox(100, 200, 300, 400),)
        assert trace.n_boxes == 1
        # The rejected block was never committed, so reverting to the
        # verified boundary changed nothing.
        assert session.truncate_calls == [(10, 10)]

    def test_ambiguity_fault_recovers(self, vocab):
        cat = vocab.word_id("cat")
        split = np.zeros(vocab.size)
        split[vocab.coord_id(200)] = 8.0
        split[vocab.coord_id(800)] = 7.9  # top-1 ~0.5, spread 600
        amb_box = rows(vocab, [0, 0, 0, 0, 0, vocab.box_open])
        amb_box = np.concatenate([amb_box, np.stack([
            onehot(vocab, 0), split,
            onehot(vocab, vocab.coord_id(200)),
            onehot(vocab, vocab.coord_id(600)),
            onehot(vocab, vocab.coord_id(600)),
            onehot(vocab, vocab.box_close)])])
        feeds = [rows(vocab, [t]) for t in
                 [100, 100, 300, 300, vocab.box_close, vocab.end]]
        script = [semantic_rows(vocab, cat), amb_box, *feeds, end_rows(vocab)]
        session = ScriptedSession(onehot(vocab, vocab.ref_open), script)

        trace = decode_hybrid(session, [vocab.cell_empty] * 4, vocab, GREEDY)

        assert len(trace.fallbacks) == 1
        assert trace.fallbacks[0].reason == "SpatialAmbiguity: slot 1"
        assert trace.flagged == ()
        assert trace.parse(vocab).boxes == [QuantBox(100, 100, 300, 300)]

    def test_second_failure_flags_block(self, vocab):
        cat = vocab.word_id("cat")
        bad_box = rows(vocab, [0, 0, 0, 0, 0, vocab.box_open])
        bad_box = np.concatenate([bad_box, rows(
            vocab, [0, 500, 500, 400, 600, vocab.box_close])])
        # The retry also produces an inverted box.
        feeds = [rows(vocab, [t]) for t in
                 [500, 500, 400, 600, vocab.box_close, vocab.end]]
        script = [semantic_rows(vocab, cat), bad_box, *feeds, end_rows(vocab)]
        session = ScriptedSession(onehot(vocab, vocab.ref_open), script)

        trace = decode_hybrid(session, [vocab.cell_empty] * 4, vocab, GREEDY)

        # One fallback record per fault even when the retry fails too;
        # the block is flagged and decoding continues to termination.
        assert len(trace.fallbacks) == 1
        assert trace.flagged == (6,)
        assert trace.terminated
        parsed = trace.parse(vocab, on_error="truncate")
        assert len(parsed.items) == 1 and parsed.items[0].boxes == ()

    def test_clean_run_has_no_fallbacks(self, vocab):
        cat = vocab.word_id("cat")
        good = rows(vocab, [0, 0, 0, 0, 0, vocab.box_open])
        good = np.concatenate([good, rows(
            vocab, [0, 100, 200, 300, 400, vocab.box_close])])
        tail = rows(vocab, [0, 0, 0, 0, 0, vocab.end])
        tail = np.concatenate([tail, end_rows(vocab)])
        script = [semantic_rows(vocab, cat), good, tail]
        session = ScriptedSession(onehot(vocab, vocab.ref_open), script)

        trace = decode_hybrid(session, [vocab.cell_empty] * 4, vocab, GREEDY)

        assert trace.fallbacks == () and trace.flagged == ()
        assert trace.parse(vocab).boxes == [QuantBox(100, 200, 300, 400)]
        # prompt + placeholder pass + two 12-row passes
        assert trace.forward_passes == 4
        assert trace.steps == 3

    def test_hybrid_requires_full_block_width(self, vocab):
        session = ScriptedSession(onehot(vocab, vocab.end), [])
        with pytest.raises(ValueError):
            decode_hybrid(session, [0], vocab, DecodeConfig(n_future=1))


class TestFastSchedule:
    def test_pass_count_one_per_block(self, vocab):
        cat = vocab.word_id("cat")
        blocks = [
            [vocab.ref_open, cat, vocab.ref_close] + [vocab.null] * 3,
            [vocab.box_open, 100, 100, 200, 200, vocab.box_close],
            [vocab.box_open, 300, 300, 400, 400, vocab.box_close],
            [vocab.box_open, 500, 500, 600, 600, vocab.box_close],
            [vocab.end] + [vocab.null] * 5,
        ]
        script = [rows(vocab, [0] + blocks[0][1:])]
        for prev, cur in zip(blocks, blocks[1:]):
            script.append(np.concatenate([
                rows(vocab, [0] * 5 + [cur[0]]),
                rows(vocab, [0] + cur[1:]),
            ]))
        session = ScriptedSession(onehot(vocab, blocks[0][0]), script)

        trace = decode_fast(session, [vocab.cell_empty] * 4, vocab, GREEDY)

        # Three boxes decode in B + 3 passes (prompt, first block, one
        # pass per remaining block).
        assert trace.forward_passes == 6
        assert trace.steps == 5
        assert trace.terminated
        assert trace.n_boxes == 3

    def test_slow_pass_count_one_per_token(self, vocab):
        stream = ([vocab.ref_open, vocab.word_id("cat"), vocab.ref_close]
                  + [vocab.null] * 3
                  + [vocab.box_open, 100, 100, 200, 200, vocab.box_close]
                  + [vocab.end] + [vocab.null] * 5)
        script = [rows(vocab, [t]) for t in stream[1:]]
        session = ScriptedSession(onehot(vocab, stream[0]), script)

        trace = decode_slow(session, [vocab.cell_empty] * 4, vocab, GREEDY)

        # The single-object answer is exactly 18 tokens in 18 passes.
        assert list(trace.tokens) == stream
        assert trace.forward_passes == 18
        assert trace.steps == 18
        assert trace.terminated

    def test_slow_budget_cut_flags_truncation(self, vocab):
        script = [rows(vocab, [t]) for t in [100, 200]]
        session = ScriptedSession(onehot(vocab, vocab.ref_open), script)
        dcfg = DecodeConfig(greedy=True, max_new_tokens=3)
        trace = decode_slow(session, [vocab.cell_empty] * 4, vocab, dcfg)
        assert len(trace.tokens) == 3
        assert not trace.terminated

    def test_fast_rejects_other_widths(self, vocab):
        session = ScriptedSession(onehot(vocab, vocab.end), [])
        with pytest.raises(ValueError):
            decode_fast(session, [0], vocab, DecodeConfig(n_future=3))

    def test_dispatcher_routes_by_mode(self, vocab):
        script = [rows(vocab, [t]) for t in [vocab.null] * 5]
        session = ScriptedSession(onehot(vocab, vocab.end), script)
        trace = decode(session, [vocab.cell_empty] * 4, vocab,
                       DecodeConfig(mode="slow", greedy=True))
        assert trace.mode == "slow"
        assert trace.terminated


# ---------------------------------------------------------------------------
# real (random) models: degeneration and cache soundness


def tiny_model(vocab, seed=0, dtype="float64", max_positions=256):
    cfg = ModelConfig(vocab_size=vocab.size, d_model=32, n_layers=2,
                      n_heads=2, d_ff=64, max_positions=max_positions,
                      dtype=dtype)
    params = init_params(cfg, np.random.default_rng(seed))
    return params, cfg


class TestOnRandomModel:
    def test_nfuture1_matches_slow_bitwise(self, vocab):
        params, cfg = tiny_model(vocab)
        prompt = [vocab.cell_empty] * 8 + [vocab.word_id("dog")]
        for seed in range(3):
            dcfg = DecodeConfig(max_new_tokens=18, n_future=1)
            a = decode_slow(CachedSession(params, cfg), prompt, vocab,
                            dcfg, np.random.default_rng(seed))
            b = decode_fast(CachedSession(params, cfg), prompt, vocab,
                            dcfg, np.random.default_rng(seed))
            assert a.tokens == b.tokens
            assert a.forward_passes == b.forward_passes

    def test_greedy_nfuture1_matches_slow(self, vocab):
        params, cfg = tiny_model(vocab, seed=5)
        prompt = [vocab.cell_empty] * 8
        dcfg = DecodeConfig(greedy=True, max_new_tokens=18, n_future=1)
        a = decode_slow(CachedSession(params, cfg), prompt, vocab, dcfg)
        b = decode_fast(CachedSession(params, cfg), prompt, vocab, dcfg)
        assert a.tokens == b.tokens

    @pytest.mark.parametrize("mode", [decode_slow, decode_fast, decode_hybrid])
    def test_cached_matches_uncached(self, vocab, mode):
        params, cfg = tiny_model(vocab, seed=9)
        prompt = [vocab.cell_empty] * 6 + [vocab.word_id("cat")]
        dcfg = DecodeConfig(greedy=True, max_new_tokens=18)
        cached = mode(CachedSession(params, cfg), prompt, vocab, dcfg)
        oracle = mode(UncachedSession(params, cfg), prompt, vocab, dcfg)
        assert cached.tokens == oracle.tokens
        assert cached.forward_passes == oracle.forward_passes
        assert cached.fallbacks == oracle.fallbacks

    def test_fast_block_pass_budget(self, vocab):
        params, cfg = tiny_model(vocab, seed=3)
        prompt = [vocab.cell_empty] * 4
        dcfg = DecodeConfig(greedy=True, max_new_tokens=24)
        trace = decode_fast(CachedSession(params, cfg), prompt, vocab, dcfg)
        # Untrained models babble to the budget: prompt + one pass per
        # block, and six tokens per block regardless.
        assert trace.n_blocks == 4
        assert trace.forward_passes == 1 + trace.steps
        assert not trace.terminated

    def test_capacity_bounds_output(self, vocab):
        params, cfg = tiny_model(vocab, seed=4, max_positions=16)
        prompt = [vocab.cell_empty] * 8
        dcfg = DecodeConfig(greedy=True)
        trace = decode_slow(CachedSession(params, cfg), prompt, vocab, dcfg)
        assert len(trace.tokens) == 8  # 16 positions minus the prompt
        assert not trace.terminated
