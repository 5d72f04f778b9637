"""Multi-attack adversary sampling and the triple-labelled detection dataset."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .attackers import SAMPLING_ATTACKERS, AttackerConfig, AttackOutcome, attack
from .model import AugmentedExample, JointModelParams
from .parallel import ordered_map
from .text import DataError, Dataset, LabeledExample, tokenize


@dataclass(frozen=True)
class AdversaryRecord:
    source: LabeledExample
    outcome: AttackOutcome
    attacker_id: str


def _attack_task(state: dict, task: tuple[str, LabeledExample]) -> AttackOutcome:
    attacker_id, ex = task
    return attack(attacker_id, state["model"], ex, state["cfg"])


def run_attacks(model, tasks: Sequence[tuple[str, LabeledExample]], cfg: AttackerConfig,
                jobs: int = 1) -> list[AttackOutcome]:
    return ordered_map(_attack_task, list(tasks), {"model": model, "cfg": cfg}, jobs)


def sample_adversaries(victim: JointModelParams, data: Dataset | Sequence[LabeledExample],
                       attacker_ids: Sequence[str] = SAMPLING_ATTACKERS, cfg: AttackerConfig | None = None,
                       jobs: int = 1) -> list[AdversaryRecord]:
    """One record per (example, attacker), dataset order first, then attacker order."""
    if not attacker_ids:
        raise ValueError("need at least one attacker")
    if cfg is None:
        raise ValueError("an AttackerConfig (with lexicon) is required")
    tasks = [(a, ex) for ex in data for a in attacker_ids]
    outcomes = run_attacks(victim, tasks, cfg, jobs)
    return [AdversaryRecord(ex, out, a) for (a, ex), out in zip(tasks, outcomes)]


def construct_detection_dataset(natural: Dataset | Sequence[LabeledExample],
                                records: Sequence[AdversaryRecord]) -> list[AugmentedExample]:
    """All naturals as (y, -, 0), then each record as (y, -, 0) if it failed or (-, y~, 1) if it succeeded."""
    known = set(natural)
    rows = [AugmentedExample(ex.sentence, ex.label, None, 0) for ex in natural]
    for r in records:
        if r.source not in known:
            raise ValueError(f"adversary source not in the natural dataset: {r.source.sentence.text!r}")
        if r.outcome.success:
            rows.append(AugmentedExample(r.outcome.perturbed, None, r.outcome.predicted_label, 1,
                                         "adversary-success", r.attacker_id))
        else:
            rows.append(AugmentedExample(r.outcome.perturbed, r.source.label, None, 0,
                                         "adversary-fail", r.attacker_id))
    return rows


def single_attack_dataset(victim: JointModelParams, data: Dataset, attacker_id: str,
                          cfg: AttackerConfig, jobs: int = 1) -> list[AugmentedExample]:
    return construct_detection_dataset(data, sample_adversaries(victim, data, [attacker_id], cfg, jobs))


def write_augmented(rows: Sequence[AugmentedExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in rows:
            obj = {"text": ex.sentence.text, "y1": ex.y1, "y2": ex.y2, "y3": ex.y3,
                   "origin": ex.origin, "attacker": ex.attacker}
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def read_augmented(path: str | Path) -> list[AugmentedExample]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rows.append(AugmentedExample(tokenize(obj["text"]), obj["y1"], obj["y2"], obj["y3"],
                                             obj.get("origin", "natural"), obj.get("attacker")))
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad augmented row ({exc})") from None
    return rows
