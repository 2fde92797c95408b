"""Walk through the 6-token block grammar: encode, inspect, break, parse.

Run:  python3 demos/grammar_tour.py
"""

from boxdec import (AnswerItem, FormatViolation, QuantBox, Vocabulary,
                    encode_answer, flatten, parse_stream, validate_block)
from boxdec.codec import GrammarState

vocab = Vocabulary()


def show(label, tokens):
    names = " ".join(vocab.surface(t) for t in tokens)
    print(f"{label:<24} {names}")


# One query with two boxes, one declared-absent query.
answer = [
    AnswerItem(query=(vocab.word_id("cat"),),
               boxes=(QuantBox(125, 125, 375, 250),
                      QuantBox(625, 500, 875, 750))),
    AnswerItem(query=(vocab.word_id("fish"),), negative=True),
]

blocks = encode_answer(answer, vocab)
print(f"{len(blocks)} blocks ({len(blocks) * 6} tokens):")
for block in blocks:
    show(f"  {block.kind.value}", block.tokens)

stream = flatten(blocks)
parsed = parse_stream(stream, vocab)
print("\nparsed back:")
for item in parsed.items:
    words = " ".join(vocab.surface(t) for t in item.query)
    if item.negative:
        print(f"  {words}: declared absent")
    else:
        print(f"  {words}: {[tuple(b.corners()) for b in item.boxes]}")

# Now corrupt one coordinate slot with a structural token and watch the
# validator point at the exact offset. The automaton must first be advanced
# past the semantic block so a box is legal at all.
_, after_query = validate_block(blocks[0].tokens, GrammarState.start(), vocab)
bad = list(blocks[1].tokens)
bad[2] = vocab.ref_close
try:
    validate_block(bad, after_query, vocab)
except FormatViolation as err:
    print(f"\ncorrupted box block rejected: {err.reason} (slot {err.offset})")

# The same stream parsed leniently truncates at the last valid boundary.
broken_stream = stream[:6] + bad + stream[12:]
lenient = parse_stream(broken_stream, vocab, on_error="truncate")
print(f"lenient parse keeps {len(lenient.items)} item(s), "
      f"terminated={lenient.terminated}")
