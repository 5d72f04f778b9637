"""Word-level attackers sharing one interface: ``attack(id, model, example, cfg)``.

``model`` is anything with ``predict_proba(tokens) -> np.ndarray``; passing a
``JointModelParams`` attacks its standard head. Every model call counts as a
query against ``cfg.query_budget``.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import UNK, JointModelParams, LinearHead, ngram_buckets, softmax
from .text import PUNCTUATION, LabeledExample, Sentence, SynonymLexicon

DEFAULT_STOPWORDS = frozenset(
    "a an and are as at be but by for from has have he her his i if in into is it its "
    "me my no not of on or our she so than that the their them then there these they "
    "this to was we were what when which who will with you your".split()
)
SAMPLING_ATTACKERS = ("pwws", "gradimp", "delimp")


class UnknownAttackerError(KeyError):
    pass


@dataclass(frozen=True)
class AttackerConfig:
    lexicon: SynonymLexicon
    max_sub_ratio: float = 0.4
    query_budget: int = 2000
    stopwords: frozenset[str] = DEFAULT_STOPWORDS
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.max_sub_ratio <= 1:
            raise ValueError(f"max_sub_ratio must lie in (0, 1], got {self.max_sub_ratio}")

    def max_substitutions(self, n_tokens: int) -> int:
        # epsilon guards ratios like 0.4 + 0.2 that land just above a multiple
        return math.ceil(self.max_sub_ratio * n_tokens - 1e-9)

    def candidates(self, word: str) -> tuple[str, ...]:
        if word in self.stopwords:
            return ()
        return self.lexicon.synonyms(word)


@dataclass(frozen=True)
class AttackOutcome:
    perturbed: Sentence
    predicted_label: int
    success: bool
    substitutions: tuple[tuple[int, str, str], ...]
    queries: int
    skipped: bool = False  # model already misclassified the input; nothing attacked

    def to_dict(self) -> dict:
        return {
            "perturbed": self.perturbed.text,
            "predicted_label": self.predicted_label,
            "success": self.success,
            "skipped": self.skipped,
            "substitutions": [list(s) for s in self.substitutions],
            "queries": self.queries,
        }


class _BudgetExhausted(Exception):
    pass


class _Queries:
    def __init__(self, model, budget: int):
        self.model = model
        self.budget = budget
        self.used = 0

    def proba(self, tokens: Sequence[str]) -> np.ndarray:
        if self.used >= self.budget:
            raise _BudgetExhausted
        self.used += 1
        return self.model.predict_proba(tokens)


def as_classifier(model):
    if isinstance(model, JointModelParams):
        return model.standard_head()
    return model


class _Search:
    """Mutable state of one attack run: committed tokens, probabilities, trace."""

    def __init__(self, model, ex: LabeledExample, cfg: AttackerConfig):
        if cfg.query_budget <= 0:
            raise ValueError("query_budget must be positive")
        self.q = _Queries(as_classifier(model), cfg.query_budget)
        self.cfg = cfg
        self.y = ex.label
        self.original = ex.sentence
        self.tokens = list(ex.sentence.tokens)
        self.max_subs = cfg.max_substitutions(len(self.tokens))
        self.subs: dict[int, tuple[str, str]] = {}
        self.probs: np.ndarray | None = None
        self.skipped = False

    def start(self) -> bool:
        """Query the clean input; False if the model already gets it wrong."""
        self.probs = self.q.proba(self.tokens)
        if int(np.argmax(self.probs)) != self.y:
            self.skipped = True
            return False
        return True

    @property
    def flipped(self) -> bool:
        return self.probs is not None and int(np.argmax(self.probs)) != self.y

    @property
    def exhausted(self) -> bool:
        return len(self.subs) >= self.max_subs

    def with_token(self, i: int, word: str) -> list[str]:
        trial = list(self.tokens)
        trial[i] = word
        return trial

    def commit(self, i: int, word: str, probs: np.ndarray | None = None) -> None:
        self.subs[i] = (self.original.tokens[i], word)
        self.tokens[i] = word
        self.probs = probs if probs is not None else self.q.proba(self.tokens)

    def outcome(self) -> AttackOutcome:
        subs = tuple((i, old, new) for i, (old, new) in sorted(self.subs.items()) if old != new)
        if self.probs is None:
            pred = self.y
        else:
            pred = int(np.argmax(self.probs))
        success = (not self.skipped) and pred != self.y
        perturbed = self.original if not subs else Sentence.from_tokens(self.tokens)
        return AttackOutcome(perturbed, pred, success, subs, self.q.used, self.skipped)


def _drop(tokens: Sequence[str], i: int) -> list[str]:
    return list(tokens[:i]) + list(tokens[i + 1 :])


def _masked(tokens: Sequence[str], i: int) -> list[str]:
    out = list(tokens)
    out[i] = UNK
    return out


def word_saliency(model, s: Sentence, y: int) -> np.ndarray:
    """Drop in P(y) when each token is replaced by a feature-less placeholder."""
    clf = as_classifier(model)
    base = clf.predict_proba(s.tokens)[y]
    return np.array([base - clf.predict_proba(_masked(s.tokens, i))[y] for i in range(len(s.tokens))])


def _greedy_over(search: _Search, order: Sequence[int]) -> None:
    """Visit positions in order, committing the synonym that most lowers P(y)."""
    y = search.y
    for i in order:
        if search.flipped or search.exhausted:
            break
        best, best_p = None, None
        for w in search.cfg.candidates(search.original.tokens[i]):
            p = search.q.proba(search.with_token(i, w))
            if p[y] < (search.probs[y] if best_p is None else best_p[y]):
                best, best_p = w, p
        if best is not None:
            search.commit(i, best, best_p)


def _ranked(scores: Sequence[float]) -> list[int]:
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def _run(search: _Search, body: Callable[[_Search], None]) -> AttackOutcome:
    try:
        if search.start():
            body(search)
    except _BudgetExhausted:
        pass
    return search.outcome()


def pwws_attack(model, ex: LabeledExample, cfg: AttackerConfig) -> AttackOutcome:
    """Probability-weighted word saliency: rank by softmax(saliency) * best drop, commit greedily."""

    def body(search: _Search):
        tokens, y = search.tokens, search.y
        p0 = search.probs[y]
        saliency = np.array([p0 - search.q.proba(_masked(tokens, i))[y] for i in range(len(tokens))])
        best_word: dict[int, str] = {}
        best_drop: dict[int, float] = {}
        for i, word in enumerate(tokens):
            for w in search.cfg.candidates(word):
                drop = p0 - search.q.proba(search.with_token(i, w))[y]
                if i not in best_drop or drop > best_drop[i]:
                    best_word[i], best_drop[i] = w, drop
        weights = softmax(saliency)
        scored = [(i, weights[i] * best_drop[i]) for i in best_drop if best_drop[i] > 0]
        scored.sort(key=lambda t: (-t[1], t[0]))
        for i, _ in scored:
            if search.exhausted:
                break
            search.commit(i, best_word[i])
            if search.flipped:
                break

    return _run(_Search(model, ex, cfg), body)


def _gradient_importance(head: LinearHead, tokens: Sequence[str], y: int, probs: np.ndarray) -> list[float]:
    """First-order increase of the true-class loss when each token's features vanish."""
    residual = probs.copy()
    residual[y] -= 1.0
    covering = ngram_buckets(tokens, head.feature_config)
    scores = []
    for i in range(len(tokens)):
        if i >= len(covering) or not covering[i]:
            scores.append(0.0)
            continue
        own = np.unique(np.array(covering[i], dtype=np.int64))
        grad = residual @ head.weight[:, own]
        scores.append(float(-grad.sum()))
    return scores


def gradient_importance_attack(model, ex: LabeledExample, cfg: AttackerConfig) -> AttackOutcome:
    """TextFooler-style greedy substitution ordered by gradient word importance."""
    head = as_classifier(model)
    if not isinstance(head, LinearHead):
        raise TypeError("gradient importance needs a linear head")

    def body(search: _Search):
        # the gradient is a by-product of the forward pass already made by start()
        scores = _gradient_importance(head, search.tokens, search.y, search.probs)
        _greedy_over(search, _ranked(scores))

    return _run(_Search(head, ex, cfg), body)


def _deletion_importance(search: _Search) -> list[float]:
    p0 = search.probs[search.y]
    return [p0 - search.q.proba(_drop(search.tokens, i))[search.y] for i in range(len(search.tokens))]


def deletion_importance_attack(model, ex: LabeledExample, cfg: AttackerConfig) -> AttackOutcome:
    """BAE-style ranking by deletion importance, lexicon substitution only."""

    def body(search: _Search):
        _greedy_over(search, _ranked(_deletion_importance(search)))

    return _run(_Search(model, ex, cfg), body)


def char_edit(word: str, rng: random.Random) -> str | None:
    """One random swap/delete/duplicate edit that changes ``word``; None if impossible."""
    if len(word) < 2:
        return None
    op = rng.choice(("swap", "delete", "duplicate"))
    if op == "swap":
        spots = [j for j in range(len(word) - 1) if word[j] != word[j + 1]]
        if spots:
            j = rng.choice(spots)
            return word[:j] + word[j + 1] + word[j] + word[j + 2 :]
        op = "delete"
    j = rng.randrange(len(word))
    if op == "delete":
        return word[:j] + word[j + 1 :]
    return word[:j] + word[j] + word[j:]


def charbug_attack(model, ex: LabeledExample, cfg: AttackerConfig) -> AttackOutcome:
    """Character-level probe: garble the most important tokens one edit each."""

    def body(search: _Search):
        for i in _ranked(_deletion_importance(search)):
            if search.flipped or search.exhausted:
                break
            word = search.original.tokens[i]
            if word in search.cfg.stopwords or all(c in PUNCTUATION for c in word):
                continue
            rng = random.Random(f"{search.cfg.seed}|{search.original.text}|{i}")
            new = char_edit(word, rng)
            if new is None:
                continue
            search.commit(i, new)

    return _run(_Search(model, ex, cfg), body)


ATTACKERS: dict[str, Callable[..., AttackOutcome]] = {
    "pwws": pwws_attack,
    "gradimp": gradient_importance_attack,
    "delimp": deletion_importance_attack,
    "charbug": charbug_attack,
}


def attack(attacker_id: str, model, ex: LabeledExample, cfg: AttackerConfig) -> AttackOutcome:
    try:
        fn = ATTACKERS[attacker_id]
    except KeyError:
        raise UnknownAttackerError(f"unknown attacker {attacker_id!r}; choose from {sorted(ATTACKERS)}") from None
    return fn(model, ex, cfg)
