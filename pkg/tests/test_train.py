"""Dataset assembly, batch padding, and optimizer loop behaviour."""

import csv

import numpy as np
import pytest

from boxdec.model import ModelConfig, TrainingDiverged, init_params
from boxdec.scenes import generate_scene, query_cases, visual_tokens
from boxdec.sequences import IGNORE, TAG_NONE, pack_examples
from boxdec.train import (TrainSettings, _pad_batch, batch_stream,
                          case_example, reference_model_config,
                          scene_examples, train_model, write_history_csv)


@pytest.fixture(scope="module")
def small_cfg(vocab):
    return ModelConfig(vocab_size=vocab.size)


class TestDatasetAssembly:
    def test_every_query_becomes_an_example(self, vocab):
        seeds = [3, 4, 5]
        examples = scene_examples(seeds, vocab)
        n_queries = sum(
            len(query_cases(generate_scene(s, vocab=vocab), vocab))
            for s in seeds)
        assert len(examples) == n_queries

    def test_single_object_answer_length(self, vocab):
        scene = generate_scene(3, vocab=vocab)
        vis = visual_tokens(scene, vocab)
        case = next(c for c in query_cases(scene, vocab)
                    if len(c.expected) == 1)
        ex = case_example(vis, case, vocab)
        # 64 visual cells + 1 query word + 18 answer tokens, twice over
        assert ex.length == 64 + 1 + 18 + 18

    def test_negative_case_supervises_neg_block(self, vocab):
        scene = generate_scene(3, vocab=vocab)
        vis = visual_tokens(scene, vocab)
        case = next(c for c in query_cases(scene, vocab) if c.negative)
        ex = case_example(vis, case, vocab)
        assert vocab.neg in ex.tokens

    def test_lengths_fit_default_row_budget(self, vocab):
        budget = TrainSettings().row_budget
        for ex in scene_examples(range(60), vocab):
            assert ex.length <= budget


class TestBatchPadding:
    def test_padding_rows_self_attend(self, vocab):
        examples = scene_examples([3], vocab)[:2]
        row = pack_examples(examples[:1])
        batch = _pad_batch([row], width=160, vocab=vocab)
        mask = batch["mask"][0]
        assert mask.any(axis=1).all()          # softmax never sees empty rows
        n = row.length
        assert not mask[n:, :n].any()          # padding stays isolated
        assert (batch["targets"][0, n:] == IGNORE).all()
        assert (batch["loss_tags"][0, n:] == TAG_NONE).all()
        assert (batch["tokens"][0, n:] == vocab.null).all()

    def test_row_wider_than_budget_rejected(self, vocab):
        row = pack_examples(scene_examples([3], vocab)[:2])
        with pytest.raises(ValueError):
            _pad_batch([row], width=row.length - 1, vocab=vocab)

    def test_batch_geometry(self, vocab):
        examples = scene_examples([3, 4], vocab)
        st = TrainSettings(rows_per_batch=3, row_budget=128)
        batch = next(batch_stream(examples, st, vocab,
                                  np.random.default_rng(0)))
        assert batch["tokens"].shape == (3, 128)
        assert batch["mask"].shape == (3, 128, 128)


class TestTraining:
    def test_memorizes_single_example(self, vocab, small_cfg):
        examples = scene_examples([3], vocab)[:1]
        st = TrainSettings(steps=200, rows_per_batch=1, peak_lr=5e-3,
                           warmup=10, seed=0)
        _, history = train_model(examples, small_cfg, st, vocab)
        assert history[-1].total < 0.05

    def test_seed_reproduces_weights(self, vocab, small_cfg):
        examples = scene_examples([3, 4], vocab)
        st = TrainSettings(steps=8, rows_per_batch=2, seed=11)
        p1, h1 = train_model(examples, small_cfg, st, vocab)
        p2, h2 = train_model(examples, small_cfg, st, vocab)
        assert all(np.array_equal(p1[k], p2[k]) for k in p1)
        assert [s.total for s in h1] == [s.total for s in h2]

    def test_zero_lr_keeps_weights(self, vocab, small_cfg):
        examples = scene_examples([3], vocab)
        st = TrainSettings(steps=5, rows_per_batch=1, peak_lr=0.0)
        params, _ = train_model(examples, small_cfg, st, vocab)
        fresh = init_params(small_cfg, st.seed)
        assert all(np.array_equal(params[k], fresh[k]) for k in params)

    def test_loss_improves_on_small_run(self, vocab):
        cfg = reference_model_config(vocab)
        examples = scene_examples(range(30), vocab)
        st = TrainSettings(steps=40, rows_per_batch=8, peak_lr=3e-3,
                           warmup=5, seed=2)
        _, history = train_model(examples, cfg, st, vocab)
        assert history[-1].total < history[0].total

    def test_divergence_aborts(self, vocab, small_cfg):
        examples = scene_examples([3], vocab)[:1]
        poisoned = init_params(small_cfg, 0)
        poisoned["w_out"] = poisoned["w_out"] * np.nan
        st = TrainSettings(steps=3, rows_per_batch=1)
        with pytest.raises(TrainingDiverged):
            train_model(examples, small_cfg, st, vocab, params=poisoned)

    def test_resume_continues_counter(self, vocab, small_cfg):
        examples = scene_examples([3], vocab)
        st = TrainSettings(steps=6, rows_per_batch=1)
        params, first = train_model(examples, small_cfg, st, vocab)
        _, rest = train_model(examples, small_cfg, st, vocab,
                              params=params, start_step=4)
        assert [s.step for s in rest] == [4, 5]

    def test_empty_dataset_rejected(self, vocab, small_cfg):
        with pytest.raises(ValueError):
            train_model([], small_cfg, TrainSettings(steps=1), vocab)

    def test_history_csv_roundtrip(self, tmp_path, vocab, small_cfg):
        examples = scene_examples([3], vocab)
        st = TrainSettings(steps=4, rows_per_batch=1)
        _, history = train_model(examples, small_cfg, st, vocab)
        out = tmp_path / "loss.csv"
        write_history_csv(out, history)
        with out.open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4
        assert [int(r["step"]) for r in rows] == [0, 1, 2, 3]
        assert float(rows[-1]["total"]) == pytest.approx(history[-1].total)
