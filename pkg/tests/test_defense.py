from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rpd.attackers import AttackerConfig
from rpd.defense import (
    ADVERSARY, NATURAL, PASSTHROUGH, REPAIRED, UNREPAIRED, defend, defend_all, detect, rat_defend, repair,
    write_traces,
)
from rpd.model import FeatureConfig, JointModelParams, featurize
from rpd.text import Sentence, SynonymLexicon

FC = FeatureConfig(buckets=1 << 10, orders=(1,))


def joint_with(std: dict[str, tuple[float, float]] = {}, det: dict[str, tuple[float, float]] = {},
               det_bias=(0.0, 0.0)) -> JointModelParams:
    p = JointModelParams.zeros(2, FC)
    for word, w in std.items():
        p.std_w[:, featurize([word], FC).indices[0]] += w
    for word, w in det.items():
        p.det_w[:, featurize([word], FC).indices[0]] += w
    p.det_b[:] = det_bias
    return p


LEX = SynonymLexicon.from_pairs([("poor", ["good", "fine"]), ("bad", ["fine"])])
CFG = AttackerConfig(LEX, max_sub_ratio=0.4)
FLAGGED = joint_with(std={"poor": (3.0, 0.0), "good": (0.0, 4.0), "fine": (0.0, 0.5)}, det_bias=(0.0, 1.0))


def test_zero_detector_is_natural():
    flagged, prob = detect(JointModelParams.zeros(2, FC), Sentence.from_tokens(["a"]))
    assert not flagged and prob == 0.5


def test_repair_flips_on_first_round():
    s = Sentence.from_tokens(["poor", "film", "here"])
    result = repair(FLAGGED, "pwws", s, 0, CFG)
    assert result.status == REPAIRED and len(result.attempts) == 1
    assert result.final_label == 1 and result.attempts[0].perturbed.tokens == ("good", "film", "here")


def test_repair_escalates_ratio_then_gives_up():
    # five tokens: round 1 allows 2 substitutions, round 2 allows 3, round 3 allows 4
    head = joint_with(std={"poor": (3.0, 0.0), "fine": (0.0, 0.1)})
    s = Sentence.from_tokens(["poor", "poor", "poor", "poor", "poor"])
    result = repair(head, "pwws", s, 0, CFG, rounds=3)
    assert result.status == UNREPAIRED and result.final_label == 0
    assert [len(a.substitutions) for a in result.attempts] == [2, 3, 4]


def test_repair_needs_a_round():
    with pytest.raises(ValueError):
        repair(FLAGGED, "pwws", Sentence.from_tokens(["poor"]), 0, CFG, rounds=0)


def test_defend_natural_passthrough():
    p = joint_with(std={"poor": (3.0, 0.0)}, det_bias=(1.0, 0.0))
    s = Sentence.from_tokens(["poor", "film"])
    t = defend(p, s, CFG)
    assert t.verdict == NATURAL and t.status == PASSTHROUGH and t.repair_attempts == ()
    assert t.final_label == p.standard_head().predict(s) and t.output is s


def test_defend_adversary_repaired_label_differs_from_fake():
    s = Sentence.from_tokens(["poor", "film", "here"])
    t = defend(FLAGGED, s, CFG)
    assert t.verdict == ADVERSARY and t.status == REPAIRED
    assert t.final_label != t.fake_label == 0
    assert t.output.tokens == ("good", "film", "here")


def test_rat_routing():
    nat = joint_with(std={"x": (1.0, 0.0)})
    adv = joint_with(std={"x": (0.0, 1.0)})
    s = Sentence.from_tokens(["x"])
    assert rat_defend(joint_with(det_bias=(1.0, 0.0)), nat, adv, s) == nat.standard_head().predict(s) == 0
    assert rat_defend(joint_with(det_bias=(0.0, 1.0)), nat, adv, s) == adv.standard_head().predict(s) == 1


WORDS = ["poor", "bad", "good", "fine", "film", "here"]


@st.composite
def defense_case(draw):
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    p = JointModelParams.zeros(2, FC)
    for word in WORDS:
        k = featurize([word], FC).indices[0]
        p.std_w[:, k] = rng.normal(0, 2, 2)
        p.det_w[:, k] = rng.normal(0, 2, 2)
    s = Sentence.from_tokens(draw(st.lists(st.sampled_from(WORDS), min_size=1, max_size=7)))
    return p, s


@settings(max_examples=150, deadline=None)
@given(defense_case())
def test_trace_invariants(case):
    p, s = case
    t = defend(p, s, CFG)
    assert 0.0 <= t.detector_prob <= 1.0
    assert t.fake_label == p.standard_head().predict(s)
    if t.verdict == NATURAL:
        assert t.repair_attempts == () and t.status == PASSTHROUGH and t.final_label == t.fake_label
    if t.status == REPAIRED:
        assert t.repair_attempts[-1].success
        assert t.final_label == t.repair_attempts[-1].predicted_label != t.fake_label
    if t.status == UNREPAIRED:
        assert t.final_label == t.fake_label and not any(a.success for a in t.repair_attempts)
    assert defend(p, s, CFG) == t


def test_defend_all_parallel_matches_serial(tmp_path):
    sents = [Sentence.from_tokens(["poor", w, "here"]) for w in WORDS] * 3
    a = defend_all(FLAGGED, sents, CFG, jobs=1)
    b = defend_all(FLAGGED, sents, CFG, jobs=2)
    assert a == b
    write_traces(a, tmp_path / "a.jsonl")
    write_traces(b, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_reactive_guarantee_on_generated_naturals(small_corpus, small_joint, small_attack_cfg):
    for ex in small_corpus[1]:
        t = defend(small_joint, ex.sentence, small_attack_cfg)
        if t.verdict == NATURAL:
            assert t.output is ex.sentence
            assert t.final_label == small_joint.standard_head().predict(ex.sentence)
