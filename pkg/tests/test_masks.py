import numpy as np
import pytest

from boxdec.masks import (
    SequenceLayout,
    ascii_mask,
    build_mtp_step_mask,
    build_packed_training_mask,
    build_training_mask,
)


def ref_allowed(layout: SequenceLayout, i: int, j: int) -> bool:
    """Independent statement of the attention regimes, kept deliberately dumb."""
    ctx = layout.vis_len + layout.q_len
    blk_start = ctx + layout.ntp_len
    if i < blk_start:
        return j <= i
    block = (i - blk_start) // layout.block_size
    s = blk_start + block * layout.block_size
    e = s + layout.block_size
    if j < ctx:
        return True
    if blk_start <= j < s:
        return True
    return s <= j < e


def random_layout(rng: np.random.Generator) -> SequenceLayout:
    block = int(rng.choice([1, 2, 3, 6]))
    n = block * int(rng.integers(0, 5))
    return SequenceLayout(
        vis_len=int(rng.integers(0, 9)),
        q_len=int(rng.integers(1, 4)),
        ntp_len=n,
        blk_len=n,
        block_size=block,
    )


class TestTrainingMask:
    def test_spec_anchor_layout(self):
        layout = SequenceLayout(vis_len=2, q_len=1, ntp_len=6, blk_len=6)
        m = build_training_mask(layout)
        assert m.shape == (15, 15)
        assert not m[4, 10]   # ntp row must not see the parallel stream
        assert m[9, 14]       # first and last slot of the same block ...
        assert m[14, 9]       # ... see each other both ways

    def test_matches_reference_on_random_layouts(self, rng):
        for _ in range(25):
            layout = random_layout(rng)
            m = build_training_mask(layout)
            t = layout.total
            want = np.array([[ref_allowed(layout, i, j) for j in range(t)]
                             for i in range(t)])
            np.testing.assert_array_equal(m, want)

    def test_segment_isolation(self):
        layout = SequenceLayout(vis_len=5, q_len=2, ntp_len=12, blk_len=12)
        m = build_training_mask(layout)
        ns, bs, t = layout.ntp_start, layout.blk_start, layout.total
        assert not m[:bs, bs:].any()        # nothing outside blk sees blk
        assert not m[bs:, ns:bs].any()      # blk never sees ntp
        assert m[bs:, :layout.ctx_len].all()  # blk sees the whole prompt
        assert m.diagonal().all()
        # later blocks see earlier ones fully, never the reverse
        assert m[bs + 6, bs] and not m[bs, bs + 6]

    def test_empty_answer_is_pure_causal(self):
        layout = SequenceLayout(vis_len=4, q_len=2, ntp_len=0, blk_len=0)
        m = build_training_mask(layout)
        np.testing.assert_array_equal(m, np.tril(np.ones((6, 6), dtype=bool)))

    def test_layout_contracts(self):
        with pytest.raises(ValueError):
            SequenceLayout(vis_len=1, q_len=1, ntp_len=6, blk_len=12)
        with pytest.raises(ValueError):
            SequenceLayout(vis_len=1, q_len=1, ntp_len=7, blk_len=7)
        with pytest.raises(ValueError):
            SequenceLayout(vis_len=-1, q_len=1, ntp_len=0, blk_len=0)


class TestPackedMask:
    def test_block_diagonal_isolation(self, rng):
        layouts = [random_layout(rng) for _ in range(3)]
        m = build_packed_training_mask(layouts)
        sizes = [lo.total for lo in layouts]
        assert m.shape[0] == sum(sizes)
        at = 0
        for lo, size in zip(layouts, sizes):
            np.testing.assert_array_equal(
                m[at:at + size, at:at + size], build_training_mask(lo))
            m[at:at + size, at:at + size] = False
            at += size
        assert not m.any()  # nothing outside the diagonal blocks


class TestStepMask:
    def test_one_future_slot_is_causal(self):
        np.testing.assert_array_equal(
            build_mtp_step_mask(10, 1), np.tril(np.ones((11, 11), dtype=bool)))

    def test_future_block_sees_everything(self):
        m = build_mtp_step_mask(10, 6)
        assert m.shape == (16, 16)
        assert m[10:, :].all()
        np.testing.assert_array_equal(
            m[:10, :10], np.tril(np.ones((10, 10), dtype=bool)))
        assert not m[:10, 10:].any()

    def test_contracts(self):
        with pytest.raises(ValueError):
            build_mtp_step_mask(-1, 6)
        with pytest.raises(ValueError):
            build_mtp_step_mask(4, 0)


class TestAsciiDump:
    def test_layout_gutters(self):
        layout = SequenceLayout(vis_len=2, q_len=1, ntp_len=6, blk_len=6)
        art = ascii_mask(build_training_mask(layout), layout)
        lines = art.splitlines()
        assert lines[0] == "  vvqnnnnnnbbbbbb"
        assert len(lines) == 16
        assert lines[1].startswith("v #")
        assert set(lines[-1][2:]) <= {"#", "."}

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            ascii_mask(np.ones((2, 3), dtype=bool))
