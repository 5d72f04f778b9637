"""Attacked/repaired dataset partitions, the five defense metrics, and reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .attackers import AttackerConfig, AttackOutcome, as_classifier
from .defense import ADVERSARY, REPAIRED, DefenseTrace, write_traces
from .sampling import run_attacks
from .text import Dataset, LabeledExample, Sentence

METRIC_NAMES = ("clean_acc", "attacked_acc", "detection_acc", "defense_acc", "repaired_acc")


@dataclass(frozen=True)
class PartitionEntry:
    source: LabeledExample
    natural_pred: int
    attacked: Sentence  # perturbed text for adversaries, the natural text otherwise
    attacked_pred: int
    is_adversary: bool
    attacker_id: str | None = None
    outcome: AttackOutcome | None = None


@dataclass(frozen=True)
class EvalPartition:
    entries: tuple[PartitionEntry, ...]

    @property
    def d_nat(self) -> list[PartitionEntry]:
        return [e for e in self.entries if not e.is_adversary]

    @property
    def d_adv(self) -> list[PartitionEntry]:
        return [e for e in self.entries if e.is_adversary]

    @property
    def d_att(self) -> list[PartitionEntry]:
        return list(self.entries)

    @property
    def attacked_texts(self) -> list[Sentence]:
        return [e.attacked for e in self.entries]


def build_partition(model, data: Dataset | Sequence[LabeledExample], attacker_ids: Sequence[str],
                    cfg: AttackerConfig, jobs: int = 1) -> EvalPartition:
    """Attack every example; the first successful attacker (in order) places it in D_adv."""
    examples = list(data)
    clf = as_classifier(model)
    outcomes: dict[int, tuple[str, AttackOutcome]] = {}
    pending = list(range(len(examples)))
    for attacker_id in attacker_ids:
        results = run_attacks(model, [(attacker_id, examples[k]) for k in pending], cfg, jobs)
        still = []
        for k, out in zip(pending, results):
            if out.success:
                outcomes[k] = (attacker_id, out)
            else:
                still.append(k)
        pending = still
    entries = []
    for k, ex in enumerate(examples):
        pred = clf.predict(ex.sentence.tokens)
        if k in outcomes:
            attacker_id, out = outcomes[k]
            entries.append(PartitionEntry(ex, pred, out.perturbed, out.predicted_label, True, attacker_id, out))
        else:
            entries.append(PartitionEntry(ex, pred, ex.sentence, pred, False))
    return EvalPartition(tuple(entries))


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def accuracy_from_tallies(tp: int, tn: int, p: int, n: int) -> float | None:
    """(TP + TN) / (P + N); None when the split is empty."""
    return _ratio(tp + tn, p + n)


def _tally(labels: Sequence[int], preds: Sequence[int]) -> dict[str, int]:
    # class 0 counts as the negative class, every other class as positive
    tp = sum(1 for y, p in zip(labels, preds) if y != 0 and p == y)
    tn = sum(1 for y, p in zip(labels, preds) if y == 0 and p == y)
    pos = sum(1 for y in labels if y != 0)
    return {"TP": tp, "TN": tn, "P": pos, "N": len(labels) - pos}


@dataclass
class MetricsReport:
    clean_acc: float | None
    attacked_acc: float | None
    detection_acc: float | None
    defense_acc: float | None
    repaired_acc: float | None
    tallies: dict[str, int] = field(default_factory=dict)
    config_digest: str = ""
    seed: int = 0

    @property
    def metrics(self) -> dict[str, float | None]:
        return {k: getattr(self, k) for k in METRIC_NAMES}

    def to_dict(self) -> dict:
        return {"metrics": self.metrics, "tallies": dict(self.tallies),
                "config_digest": self.config_digest, "seed": self.seed}

    @classmethod
    def from_dict(cls, obj: dict) -> "MetricsReport":
        return cls(**obj["metrics"], tallies=obj["tallies"], config_digest=obj["config_digest"], seed=obj["seed"])


def compute_metrics(partition: EvalPartition, traces: Sequence[DefenseTrace], *, config_digest: str = "",
                    seed: int = 0) -> MetricsReport:
    entries = partition.entries
    if len(traces) != len(entries):
        raise ValueError(f"{len(traces)} traces for {len(entries)} partition members")
    labels = [e.source.label for e in entries]
    clean = _tally(labels, [e.natural_pred for e in entries])
    attacked = _tally(labels, [e.attacked_pred for e in entries])
    repaired = _tally(labels, [t.final_label for t in traces])

    adv = [(e, t) for e, t in zip(entries, traces) if e.is_adversary]
    nat = [(e, t) for e, t in zip(entries, traces) if not e.is_adversary]
    defense = _tally([e.source.label for e, _ in adv], [t.final_label for _, t in adv])
    # detection over D_adv: every member is a true adversary, so N* and TN* are empty
    det = {"TP*": sum(1 for _, t in adv if t.verdict == ADVERSARY), "TN*": 0, "P*": len(adv), "N*": 0}

    tallies: dict[str, int] = {}
    for prefix, t in (("clean", clean), ("attacked", attacked), ("defense", defense), ("repaired", repaired)):
        tallies.update({f"{prefix}_{k}": v for k, v in t.items()})
    tallies.update({f"detection_{k}": v for k, v in det.items()})
    tallies["natural_flagged"] = sum(1 for _, t in nat if t.verdict == ADVERSARY)
    tallies["natural_total"] = len(nat)
    tallies["detected_adversaries"] = det["TP*"]
    tallies["detected_repaired"] = sum(1 for _, t in adv if t.verdict == ADVERSARY and t.status == REPAIRED)

    return MetricsReport(
        clean_acc=accuracy_from_tallies(clean["TP"], clean["TN"], clean["P"], clean["N"]),
        attacked_acc=accuracy_from_tallies(attacked["TP"], attacked["TN"], attacked["P"], attacked["N"]),
        detection_acc=accuracy_from_tallies(det["TP*"], det["TN*"], det["P*"], det["N*"]),
        defense_acc=accuracy_from_tallies(defense["TP"], defense["TN"], defense["P"], defense["N"]),
        repaired_acc=accuracy_from_tallies(repaired["TP"], repaired["TN"], repaired["P"], repaired["N"]),
        tallies=tallies,
        config_digest=config_digest,
        seed=seed,
    )


# --- output similarity ---------------------------------------------------


def output_vector(model, s: Sentence) -> np.ndarray:
    """Standard-head logits centred on their mean."""
    z = as_classifier(model).scores(s.tokens)
    return z - z.mean()


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    if np.array_equal(a, b):
        return 1.0
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class CosineResult:
    delta_adv: float | None
    delta_rep: float | None
    adv_pairs: tuple[float, ...]
    rep_pairs: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"delta_adv": self.delta_adv, "delta_rep": self.delta_rep,
                "adv_pairs": list(self.adv_pairs), "rep_pairs": list(self.rep_pairs)}


def cosine_analysis(model, naturals: Sequence[Sentence], adversaries: Sequence[Sentence],
                    repaired: Sequence[Sentence]) -> CosineResult:
    if not len(naturals) == len(adversaries) == len(repaired):
        raise ValueError("naturals, adversaries and repaired texts must be aligned")
    nat = [output_vector(model, s) for s in naturals]
    adv = tuple(cosine(output_vector(model, s), v) for s, v in zip(adversaries, nat))
    rep = tuple(cosine(output_vector(model, s), v) for s, v in zip(repaired, nat))
    mean = lambda xs: float(np.mean(xs)) if xs else None  # noqa: E731
    return CosineResult(mean(adv), mean(rep), adv, rep)


def export_vectors(model, sentences: Sequence[Sentence], path: str | Path, tags: Sequence[str] | None = None) -> None:
    """Raw standard-head logits per text, for projection with external tools."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        C = as_classifier(model).class_count
        w.writerow(["tag", "text"] + [f"z{c}" for c in range(C)])
        for k, s in enumerate(sentences):
            z = as_classifier(model).scores(s.tokens)
            w.writerow([tags[k] if tags else "", s.text] + [repr(float(v)) for v in z])


# --- reports -------------------------------------------------------------


def _fmt_pct(v: float | None) -> str:
    return "n/a" if v is None else f"{100 * v:.2f}"


def render_report(report: MetricsReport, format: str) -> str:
    if format == "json":
        return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    if format == "markdown":
        head = ["Clean Acc.(%)", "Attacked Acc.(%)", "Detection Acc.(%)", "Defense Acc.(%)", "Repaired Acc.(%)"]
        row = [_fmt_pct(report.metrics[k]) for k in METRIC_NAMES]
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head), "| " + " | ".join(row) + " |", ""]
        lines += ["| tally | count |", "|---|---|"]
        lines += [f"| {k} | {v} |" for k, v in sorted(report.tallies.items())]
        lines += ["", f"seed: {report.seed}  ", f"config digest: `{report.config_digest}`", ""]
        return "\n".join(lines)
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["key", "value"])
        for k in METRIC_NAMES:
            w.writerow([k, "" if report.metrics[k] is None else repr(report.metrics[k])])
        for k, v in sorted(report.tallies.items()):
            w.writerow([k, v])
        w.writerow(["config_digest", report.config_digest])
        w.writerow(["seed", report.seed])
        return buf.getvalue()
    raise ValueError(f"unknown report format {format!r}; choose json, csv or markdown")


def emit_report(report: MetricsReport, traces: Sequence[DefenseTrace] | None, path: str | Path,
                format: str = "json") -> Path:
    """Write the report; traces (if given) go to a sibling ``.traces.jsonl`` file."""
    text = render_report(report, format)
    path = Path(path)
    path.write_text(text, encoding="utf-8")
    if traces is not None:
        write_traces(traces, path.with_suffix(".traces.jsonl"))
    return path
