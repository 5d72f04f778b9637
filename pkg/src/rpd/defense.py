"""Reactive perturbation defocusing.

Inputs the detector head calls natural go straight through the standard head.
Inputs it flags are repaired by attacking the standard head with its own
(presumed fake) prediction as the target label: a substitution that moves the
prediction away from that label is kept as a safe perturbation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .attackers import AttackerConfig, AttackOutcome, attack
from .model import JointModelParams
from .parallel import ordered_map
from .text import LabeledExample, Sentence

NATURAL, ADVERSARY = "natural", "adversary"
PASSTHROUGH, REPAIRED, UNREPAIRED = "passthrough", "repaired", "unrepaired"
ROUND_RATIO_STEP = 0.2


@dataclass(frozen=True)
class RepairResult:
    attempts: tuple[AttackOutcome, ...]
    status: str
    final_label: int


@dataclass(frozen=True)
class DefenseTrace:
    input: Sentence
    detector_prob: float
    verdict: str
    repair_attempts: tuple[AttackOutcome, ...]
    final_label: int
    status: str
    fake_label: int

    @property
    def output(self) -> Sentence:
        """Text the final label was read from."""
        if self.status == REPAIRED:
            return self.repair_attempts[-1].perturbed
        return self.input

    def to_dict(self) -> dict:
        return {
            "input": self.input.text,
            "detector_prob": self.detector_prob,
            "verdict": self.verdict,
            "fake_label": self.fake_label,
            "repair_attempts": [a.to_dict() for a in self.repair_attempts],
            "final_label": self.final_label,
            "status": self.status,
        }


def detect(joint: JointModelParams, s: Sentence) -> tuple[bool, float]:
    p = joint.detector_head().predict_proba(s.tokens)
    # ties resolve to index 0, i.e. natural
    return int(np.argmax(p)) == 1, float(p[1])


def repair(joint: JointModelParams, attacker_id: str, s: Sentence, fake_label: int,
           cfg: AttackerConfig, rounds: int = 3) -> RepairResult:
    if rounds < 1:
        raise ValueError("repair needs at least one round")
    head = joint.standard_head()
    target = LabeledExample(s, fake_label)
    attempts = []
    for r in range(rounds):
        ratio = min(1.0, cfg.max_sub_ratio + ROUND_RATIO_STEP * r)
        out = attack(attacker_id, head, target, replace(cfg, max_sub_ratio=ratio))
        attempts.append(out)
        if out.success:
            return RepairResult(tuple(attempts), REPAIRED, out.predicted_label)
    return RepairResult(tuple(attempts), UNREPAIRED, fake_label)


def defend(joint: JointModelParams, s: Sentence, cfg: AttackerConfig, attacker_id: str = "pwws",
           rounds: int = 3) -> DefenseTrace:
    flagged, prob = detect(joint, s)
    fake = joint.standard_head().predict(s.tokens)
    if not flagged:
        return DefenseTrace(s, prob, NATURAL, (), fake, PASSTHROUGH, fake)
    result = repair(joint, attacker_id, s, fake, cfg, rounds)
    return DefenseTrace(s, prob, ADVERSARY, result.attempts, result.final_label, result.status, fake)


def _defend_task(state: dict, s: Sentence) -> DefenseTrace:
    return defend(state["joint"], s, state["cfg"], state["attacker_id"], state["rounds"])


def defend_all(joint: JointModelParams, sentences: Sequence[Sentence], cfg: AttackerConfig,
               attacker_id: str = "pwws", rounds: int = 3, jobs: int = 1) -> list[DefenseTrace]:
    state = {"joint": joint, "cfg": cfg, "attacker_id": attacker_id, "rounds": rounds}
    return ordered_map(_defend_task, list(sentences), state, jobs)


def rat_defend(detector_joint: JointModelParams, natural_model: JointModelParams,
               adversary_model: JointModelParams, s: Sentence) -> int:
    """Route by the detector to one of two separately trained classifiers."""
    flagged, _ = detect(detector_joint, s)
    model = adversary_model if flagged else natural_model
    return model.standard_head().predict(s.tokens)


def write_traces(traces: Sequence[DefenseTrace], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in traces:
            fh.write(json.dumps(t.to_dict(), sort_keys=True) + "\n")
