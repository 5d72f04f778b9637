"""End-to-end composition of the stages; used by the CLI and the acceptance suite."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .attackers import SAMPLING_ATTACKERS, AttackerConfig
from .defense import DefenseTrace, defend_all, detect, rat_defend, write_traces
from .evaluation import (
    CosineResult, EvalPartition, MetricsReport, build_partition, compute_metrics, cosine_analysis,
    emit_report, export_vectors,
)
from .model import (
    AugmentedExample, JointModelParams, TrainConfig, adversarial_training_rows, save_model, train_at_baseline,
    train_joint, train_victim,
)
from .sampling import AdversaryRecord, construct_detection_dataset, sample_adversaries, write_augmented
from .text import Dataset

log = logging.getLogger(__name__)


def accuracy(model: JointModelParams, data: Dataset) -> float:
    head = model.standard_head()
    return sum(head.predict(ex.sentence.tokens) == ex.label for ex in data) / max(len(data), 1)


@dataclass
class EvaluationResult:
    partition: EvalPartition
    traces: list[DefenseTrace]
    report: MetricsReport
    cosine: CosineResult


def evaluate_joint(joint: JointModelParams, test: Dataset, attack_cfg: AttackerConfig,
                   eval_attackers: Sequence[str] = ("pwws",), defense_attacker: str = "pwws", rounds: int = 3,
                   jobs: int = 1, config_digest: str = "", seed: int = 0) -> EvaluationResult:
    """Attack the joint standard head, defend every attacked text, score and compare outputs."""
    partition = build_partition(joint, test, eval_attackers, attack_cfg, jobs)
    traces = defend_all(joint, partition.attacked_texts, attack_cfg, defense_attacker, rounds, jobs)
    report = compute_metrics(partition, traces, config_digest=config_digest, seed=seed)
    # false positives are counted over every clean test input, not only the ones the attack missed
    report.tallies["clean_flagged"] = sum(detect(joint, ex.sentence)[0] for ex in test)
    report.tallies["clean_total"] = len(test)
    adv = [(e, t) for e, t in zip(partition.entries, traces) if e.is_adversary]
    cos = cosine_analysis(joint, [e.source.sentence for e, _ in adv], [e.attacked for e, _ in adv],
                          [t.output for _, t in adv])
    return EvaluationResult(partition, traces, report, cos)


@dataclass
class PipelineResult:
    victim: JointModelParams
    victim_clean_acc: float
    records: list[AdversaryRecord]
    augmented: list[AugmentedExample]
    joint: JointModelParams
    evaluation: EvaluationResult

    @property
    def report(self) -> MetricsReport:
        return self.evaluation.report


def run_pipeline(train: Dataset, test: Dataset, attack_cfg: AttackerConfig, train_cfg: TrainConfig, *,
                 sampling_attackers: Sequence[str] = SAMPLING_ATTACKERS, eval_attackers: Sequence[str] = ("pwws",),
                 defense_attacker: str = "pwws", rounds: int = 3, jobs: int = 1, config_digest: str = "",
                 out_dir: str | Path | None = None) -> PipelineResult:
    log.info("training victim on %d examples", len(train))
    victim = train_victim(train, train_cfg)
    victim_acc = accuracy(victim, test)
    log.info("victim clean accuracy %.4f; sampling with %s", victim_acc, ",".join(sampling_attackers))
    records = sample_adversaries(victim, train, sampling_attackers, attack_cfg, jobs)
    augmented = construct_detection_dataset(train, records)
    log.info("training joint model on %d rows", len(augmented))
    joint = train_joint(augmented, train_cfg, train.class_count)
    evaluation = evaluate_joint(joint, test, attack_cfg, eval_attackers, defense_attacker, rounds, jobs,
                                config_digest, train_cfg.seed)
    tallies = evaluation.report.tallies
    tallies["victim_correct"] = round(victim_acc * len(test))
    tallies["victim_total"] = len(test)
    result = PipelineResult(victim, victim_acc, records, augmented, joint, evaluation)
    if out_dir is not None:
        write_outputs(result, Path(out_dir))
    return result


def write_outputs(result: PipelineResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    save_model(result.victim, out / "victim.rpdj")
    save_model(result.joint, out / "joint.rpdj")
    write_augmented(result.augmented, out / "augmented.jsonl")
    ev = result.evaluation
    for fmt, name in (("json", "report.json"), ("markdown", "report.md"), ("csv", "report.csv")):
        emit_report(ev.report, None, out / name, fmt)
    write_traces(ev.traces, out / "traces.jsonl")
    write_cosine(ev, result.joint, out)


def write_cosine(ev: EvaluationResult, joint: JointModelParams, out: Path) -> None:
    (out / "cosine.json").write_text(json.dumps(ev.cosine.to_dict(), sort_keys=True, indent=2) + "\n")
    adv = [(e, t) for e, t in zip(ev.partition.entries, ev.traces) if e.is_adversary]
    texts, tags = [], []
    for e, t in adv:
        texts += [e.source.sentence, e.attacked, t.output]
        tags += ["natural", "adversary", "repaired"]
    export_vectors(joint, texts, out / "vectors.csv", tags)


# --- baselines ------------------------------------------------------------


def detection_rate(joint: JointModelParams, partition: EvalPartition) -> float | None:
    """Share of D_adv members the detector head flags."""
    adv = partition.d_adv
    if not adv:
        return None
    return sum(detect(joint, e.attacked)[0] for e in adv) / len(adv)


def repair_success_rate(report: MetricsReport) -> float | None:
    t = report.tallies
    return t["detected_repaired"] / t["detected_adversaries"] if t["detected_adversaries"] else None


def false_positive_rate(report: MetricsReport) -> float | None:
    """Share of clean test inputs the detector flags."""
    t = report.tallies
    return t["clean_flagged"] / t["clean_total"] if t.get("clean_total") else None


def unseen_attack_detection(joint: JointModelParams, test: Dataset, attacker_id: str, attack_cfg: AttackerConfig,
                            jobs: int = 1) -> float | None:
    """Detection rate on successful adversaries from an attacker the detector never trained on."""
    return detection_rate(joint, build_partition(joint, test, [attacker_id], attack_cfg, jobs))


def sampling_strategy_comparison(train: Dataset, test: Dataset, attack_cfg: AttackerConfig, train_cfg: TrainConfig,
                                 seeds: Sequence[int], single: str = "pwws",
                                 held_out: Sequence[str] = ("gradimp", "delimp"), jobs: int = 1) -> dict:
    """Detection on ``held_out`` attackers after single-attack vs multi-attack sampling, per seed."""
    out = {"single": [], "multi": []}
    for seed in seeds:
        tcfg, acfg = replace(train_cfg, seed=seed), replace(attack_cfg, seed=seed)
        victim = train_victim(train, tcfg)
        records = sample_adversaries(victim, train, (single, *held_out), acfg, jobs)
        for name, keep in (("single", (single,)), ("multi", (single, *held_out))):
            rows = construct_detection_dataset(train, [r for r in records if r.attacker_id in keep])
            joint = train_joint(rows, tcfg, train.class_count)
            rates = [unseen_attack_detection(joint, test, a, acfg, jobs) for a in held_out]
            out[name].append(float(np.mean([r for r in rates if r is not None])))
    out["single_mean"] = float(np.mean(out["single"]))
    out["multi_mean"] = float(np.mean(out["multi"]))
    return out


def baselines(train: Dataset, test: Dataset, records: Sequence[AdversaryRecord], victim: JointModelParams,
              joint: JointModelParams, attack_cfg: AttackerConfig, train_cfg: TrainConfig,
              eval_attackers: Sequence[str] = ("pwws",), jobs: int = 1) -> dict:
    """Adversarial training (AT) and reactive adversarial training (RAT) under the same attack."""
    adv_rows = adversarial_training_rows(records)
    at_model = train_at_baseline(train, adv_rows, train_cfg)
    at_part = build_partition(at_model, test, eval_attackers, attack_cfg, jobs)
    at = {
        "clean_acc": accuracy(at_model, test),
        "attacked_acc": sum(e.attacked_pred == e.source.label for e in at_part.entries) / len(test),
    }
    empty = Dataset((), train.class_count, "empty")
    adversary_model = train_at_baseline(empty, adv_rows, train_cfg) if adv_rows else victim
    rat_part = build_partition(victim, test, eval_attackers, attack_cfg, jobs)
    routed = [rat_defend(joint, victim, adversary_model, e.attacked) for e in rat_part.entries]
    adv_idx = [k for k, e in enumerate(rat_part.entries) if e.is_adversary]
    rat = {
        "clean_acc": sum(rat_defend(joint, victim, adversary_model, ex.sentence) == ex.label for ex in test) / len(test),
        "attacked_acc": sum(e.attacked_pred == e.source.label for e in rat_part.entries) / len(test),
        "repaired_acc": sum(p == e.source.label for p, e in zip(routed, rat_part.entries)) / len(test),
        "defense_acc": (sum(routed[k] == rat_part.entries[k].source.label for k in adv_idx) / len(adv_idx))
        if adv_idx else None,
    }
    return {"AT": at, "RAT": rat}
