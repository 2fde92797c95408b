"""Shared test utilities: random grammar material with a fixed seed contract."""

from typing import List

import numpy as np

from boxdec.codec import AnswerItem
from boxdec.vocab import QuantBox, Vocabulary, sort_boxes


def random_box(rng: np.random.Generator) -> QuantBox:
    x1 = int(rng.integers(0, 1001))
    y1 = int(rng.integers(0, 1001))
    x2 = int(rng.integers(x1, 1001))
    y2 = int(rng.integers(y1, 1001))
    return QuantBox(x1, y1, x2, y2)


def random_answer(rng: np.random.Generator, vocab: Vocabulary,
                  max_items: int = 5, max_boxes: int = 4,
                  max_words: int = 8) -> List[AnswerItem]:
    """Random valid answer; boxes pre-sorted so roundtrips compare as identity."""
    words = list(vocab.text_range)
    items = []
    for _ in range(int(rng.integers(0, max_items + 1))):
        q_len = int(rng.integers(1, max_words + 1))
        query = tuple(int(w) for w in rng.choice(words, size=q_len))
        if rng.random() < 0.25:
            items.append(AnswerItem(query=query, negative=True))
        else:
            n = int(rng.integers(1, max_boxes + 1))
            boxes = tuple(sort_boxes(random_box(rng) for _ in range(n)))
            items.append(AnswerItem(query=query, boxes=boxes))
    return items
