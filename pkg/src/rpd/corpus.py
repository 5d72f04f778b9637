"""Seeded two-class synthetic corpus with a matching synonym lexicon.

Vocabulary (400 pseudo-words, fixed spelling):

* 40 function words, frequent, never substitutable;
* 280 neutral content words in synonym groups of four;
* 40 words per class in synonym groups of four. Within a group the members
  get decreasing frequency (``MEMBER_FREQ``, common to rare) and each word is
  tilted toward its class by ``MEMBER_TILT``. The rare last member carries a
  much stronger tilt than its siblings;
* every class group (``CONFUSABLE_FRACTION``) also lists the rare member of
  a paired opposite-class group as a synonym, and vice versa. These
  confusable links are what lets word-substitution attacks flip labels; they
  are a minority of all synonym edges.

A sentence has 8-16 tokens; each token is a class word with probability
``CLASS_WORD_RATE`` (drawn from the class-tilted distribution), otherwise a
function or neutral word.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .text import Dataset, LabeledExample, Sentence, SynonymLexicon, write_dataset, write_lexicon

CONSONANTS = "bdfgklmnprstvz"
VOWELS = "aeiou"
N_FUNCTION = 40
N_NEUTRAL_GROUPS = 70
N_CLASS_GROUPS = 10
GROUP_SIZE = 4
MEMBER_FREQ = (10.0, 5.0, 2.5, 0.3)
MEMBER_TILT = (6.0, 6.0, 6.0, 20.0)
CONFUSABLE_MEMBER = -1
CLASS_WORD_RATE = 0.4
FUNCTION_SHARE = 0.5
CONFUSABLE_FRACTION = 1.0
MIN_LEN, MAX_LEN = 8, 16


def vocabulary(size: int = 400) -> list[str]:
    """Fixed pseudo-word spellings (independent of the corpus seed)."""
    syllables = [c + v for c in CONSONANTS for v in VOWELS]
    words = ["".join(p) for p in itertools.product(syllables, repeat=2)]
    order = np.random.default_rng(0).permutation(len(words))
    return [words[i] for i in order[:size]]


@dataclass(frozen=True)
class CorpusSpec:
    function_words: tuple[str, ...]
    neutral_groups: tuple[tuple[str, ...], ...]
    class_groups: tuple[tuple[tuple[str, ...], ...], ...]  # [class][group][member]
    confusable: tuple[tuple[int, int], ...]  # (class-0 group, class-1 group)
    lexicon: SynonymLexicon


def build_spec(seed: int) -> CorpusSpec:
    rng = np.random.default_rng(seed)
    words = vocabulary(N_FUNCTION + GROUP_SIZE * (N_NEUTRAL_GROUPS + 2 * N_CLASS_GROUPS))
    pos = 0

    def take(n):
        nonlocal pos
        out = words[pos : pos + n]
        pos += n
        return tuple(out)

    function_words = take(N_FUNCTION)
    neutral = tuple(take(GROUP_SIZE) for _ in range(N_NEUTRAL_GROUPS))
    classes = tuple(tuple(take(GROUP_SIZE) for _ in range(N_CLASS_GROUPS)) for _ in range(2))

    n_pairs = int(round(CONFUSABLE_FRACTION * N_CLASS_GROUPS))
    g0 = rng.permutation(N_CLASS_GROUPS)[:n_pairs]
    g1 = rng.permutation(N_CLASS_GROUPS)[:n_pairs]
    confusable = tuple((int(a), int(b)) for a, b in zip(g0, g1))

    syn: dict[str, list[str]] = {}
    for group in neutral + classes[0] + classes[1]:
        for w in group:
            syn[w] = [v for v in group if v != w]
    for a, b in confusable:
        rare0, rare1 = classes[0][a][CONFUSABLE_MEMBER], classes[1][b][CONFUSABLE_MEMBER]
        for w in classes[0][a]:
            if w != rare0:
                syn[w].append(rare1)
        for w in classes[1][b]:
            if w != rare1:
                syn[w].append(rare0)
    lexicon = SynonymLexicon.from_pairs(sorted(syn.items()))
    return CorpusSpec(function_words, neutral, classes, confusable, lexicon)


def _distributions(spec: CorpusSpec):
    class_words = [w for c in spec.class_groups for g in c for w in g]
    word_class = {w: c for c, groups in enumerate(spec.class_groups) for g in groups for w in g}
    freq = {w: MEMBER_FREQ[i] for c in spec.class_groups for g in c for i, w in enumerate(g)}
    tilt = {w: MEMBER_TILT[i] for c in spec.class_groups for g in c for i, w in enumerate(g)}
    per_class = []
    for c in range(2):
        p = np.array([freq[w] * (tilt[w] if word_class[w] == c else 1.0) for w in class_words])
        per_class.append(p / p.sum())
    neutral_words = [w for g in spec.neutral_groups for w in g]
    nf = np.array([MEMBER_FREQ[i % GROUP_SIZE] for i in range(len(neutral_words))])
    ff = 1.0 / np.arange(1, len(spec.function_words) + 1)
    filler = list(spec.function_words) + neutral_words
    pf = np.concatenate([FUNCTION_SHARE * ff / ff.sum(), (1 - FUNCTION_SHARE) * nf / nf.sum()])
    return class_words, per_class, filler, pf


def generate_corpus(seed: int = 42, n_train: int = 2000, n_test: int = 500):
    """Return ``(train, test, lexicon)``; labels are balanced in expectation."""
    spec = build_spec(seed)
    class_words, per_class, filler, pf = _distributions(spec)
    rng = np.random.default_rng([seed, 1])

    def sentence(label: int) -> Sentence:
        n = int(rng.integers(MIN_LEN, MAX_LEN + 1))
        is_class = rng.random(n) < CLASS_WORD_RATE
        cw = rng.choice(len(class_words), size=n, p=per_class[label])
        fw = rng.choice(len(filler), size=n, p=pf)
        return Sentence.from_tokens(class_words[cw[k]] if is_class[k] else filler[fw[k]] for k in range(n))

    def draw(n: int, name: str) -> Dataset:
        labels = rng.integers(0, 2, size=n)
        return Dataset(tuple(LabeledExample(sentence(int(y)), int(y)) for y in labels), 2, name)

    return draw(n_train, "train"), draw(n_test, "test"), spec.lexicon


def write_corpus(out_dir: str | Path, seed: int = 42, n_train: int = 2000, n_test: int = 500) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test, lexicon = generate_corpus(seed, n_train, n_test)
    paths = {"train": out / "train.jsonl", "test": out / "test.jsonl", "lexicon": out / "lexicon.tsv"}
    write_dataset(train, paths["train"])
    write_dataset(test, paths["test"])
    write_lexicon(lexicon, paths["lexicon"])
    return paths
