from __future__ import annotations

import pytest

from rpd.attackers import AttackOutcome
from rpd.model import FeatureConfig, JointModelParams
from rpd.sampling import (
    AdversaryRecord, construct_detection_dataset, read_augmented, sample_adversaries, single_attack_dataset,
    write_augmented,
)
from rpd.text import LabeledExample, Sentence


def record(src: LabeledExample, tokens, pred: int, attacker="pwws") -> AdversaryRecord:
    s = Sentence.from_tokens(tokens)
    subs = tuple((i, a, b) for i, (a, b) in enumerate(zip(src.sentence.tokens, tokens)) if a != b)
    return AdversaryRecord(src, AttackOutcome(s, pred, pred != src.label, subs, 3), attacker)


X = LabeledExample(Sentence.from_tokens(["good", "film"]), 1)


def test_natural_row():
    (row,) = construct_detection_dataset([X], [])
    assert (row.sentence, row.y1, row.y2, row.y3, row.origin) == (X.sentence, 1, None, 0, "natural")


def test_successful_adversary_row():
    rows = construct_detection_dataset([X], [record(X, ["poor", "film"], 0)])
    adv = rows[1]
    assert (adv.sentence.tokens, adv.y1, adv.y2, adv.y3, adv.origin) == (("poor", "film"), None, 0, 1,
                                                                          "adversary-success")


def test_failed_adversary_row():
    rows = construct_detection_dataset([X], [record(X, ["fine", "film"], 1)])
    adv = rows[1]
    assert (adv.sentence.tokens, adv.y1, adv.y2, adv.y3, adv.origin) == (("fine", "film"), 1, None, 0,
                                                                          "adversary-fail")


def test_unknown_source_rejected():
    other = LabeledExample(Sentence.from_tokens(["bad"]), 0)
    with pytest.raises(ValueError):
        construct_detection_dataset([X], [record(other, ["bad"], 0)])


def test_sampling_shape_and_order(small_corpus, small_victim, small_records):
    train = small_corpus[0]
    assert len(small_records) == 3 * len(train)
    assert [r.attacker_id for r in small_records[:6]] == ["pwws", "gradimp", "delimp"] * 2
    assert all(small_records[3 * k].source == ex for k, ex in enumerate(train))


def test_sampling_success_rate_on_generator(small_records):
    pwws = [r for r in small_records if r.attacker_id == "pwws"]
    assert sum(r.outcome.success for r in pwws) / len(pwws) > 0.3


def test_records_differ_or_have_no_substitutions(small_records):
    for r in small_records:
        assert r.outcome.perturbed != r.source.sentence or not r.outcome.substitutions


def test_detection_dataset_invariants(small_corpus, small_records):
    rows = construct_detection_dataset(small_corpus[0], small_records)
    assert len(rows) == len(small_corpus[0]) + len(small_records)
    for row in rows:
        assert (row.y3 == 1) == (row.y1 is None) == (row.y2 is not None)
    assert all(r.origin == "natural" for r in rows[: len(small_corpus[0])])


def test_zero_weight_victim_all_fail(small_corpus, small_attack_cfg):
    victim = JointModelParams.zeros(2, FeatureConfig())
    data = small_corpus[0].examples[:20]
    records = sample_adversaries(victim, data, cfg=small_attack_cfg)
    assert len(records) == 60 and not any(r.outcome.success for r in records)


def test_single_attack_dataset_is_composition(small_corpus, small_victim, small_attack_cfg):
    data = small_corpus[0]
    rows = single_attack_dataset(small_victim, data, "pwws", small_attack_cfg)
    assert len(rows) == 2 * len(data)
    assert rows == construct_detection_dataset(data, sample_adversaries(small_victim, data, ["pwws"],
                                                                        small_attack_cfg))


def test_empty_attacker_list_rejected(small_corpus, small_victim, small_attack_cfg):
    with pytest.raises(ValueError):
        sample_adversaries(small_victim, small_corpus[0], [], small_attack_cfg)


def test_parallel_sampling_matches_serial(small_corpus, small_victim, small_attack_cfg):
    data = small_corpus[0].examples[:40]
    serial = sample_adversaries(small_victim, data, cfg=small_attack_cfg, jobs=1)
    pooled = sample_adversaries(small_victim, data, cfg=small_attack_cfg, jobs=3)
    assert serial == pooled


def test_augmented_round_trip_and_determinism(tmp_path, small_corpus, small_victim, small_attack_cfg):
    data = small_corpus[0].examples[:30]
    a = construct_detection_dataset(data, sample_adversaries(small_victim, data, cfg=small_attack_cfg))
    b = construct_detection_dataset(data, sample_adversaries(small_victim, data, cfg=small_attack_cfg))
    write_augmented(a, tmp_path / "a.jsonl")
    write_augmented(b, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    back = read_augmented(tmp_path / "a.jsonl")
    assert [(r.sentence.tokens, r.y1, r.y2, r.y3, r.origin, r.attacker) for r in back] == \
           [(r.sentence.tokens, r.y1, r.y2, r.y3, r.origin, r.attacker) for r in a]
