"""Print the attention mask regimes side by side.

Three views: the joint training mask (causal prompt+ntp, block-causal blk),
the same thing for two packed samples, and the incremental decode-step mask.

Run:  python3 demos/mask_gallery.py
"""

from boxdec.masks import (SequenceLayout, ascii_mask, build_mtp_step_mask,
                          build_packed_training_mask, build_training_mask)

print("=== training mask: vis 2, q 1, ntp 6, blk 6 (one block) ===")
layout = SequenceLayout(vis_len=2, q_len=1, ntp_len=6, blk_len=6)
print(ascii_mask(build_training_mask(layout), layout))

print()
print("=== two blocks: cross-block causal, intra-block bidirectional ===")
layout2 = SequenceLayout(vis_len=2, q_len=1, ntp_len=12, blk_len=12)
print(ascii_mask(build_training_mask(layout2), layout2))

print()
print("=== packed pair: no attention across sample boundaries ===")
small = SequenceLayout(vis_len=1, q_len=1, ntp_len=6, blk_len=6)
packed = build_packed_training_mask([small, small])
labels = []
for lo in (small, small):
    labels += [{"vis": "v", "q": "q", "ntp": "n", "blk": "b"}[lo.segment_of(i)]
               for i in range(lo.total)]
print(ascii_mask(packed, labels=labels))

print()
print("=== decode step: committed prefix 6, block of 6 mask rows ===")
print(ascii_mask(build_mtp_step_mask(committed_len=6, n_future=6)))
