"""Command-line driver: one subcommand per pipeline phase.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path
from typing import Callable

from .attackers import attack
from .config import ConfigError, RunConfig, load_config, schema_help
from .corpus import write_corpus
from .defense import defend_all, write_traces
from .evaluation import emit_report
from .model import CheckpointError, load_model, save_model, train_joint, train_victim
from .pipeline import accuracy, evaluate_joint, run_pipeline, write_cosine, write_outputs
from .sampling import construct_detection_dataset, read_augmented, run_attacks, sample_adversaries, write_augmented
from .text import DataError, Dataset, load_dataset

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4
REPORT_SUFFIX = {"json": ".json", "csv": ".csv", "markdown": ".md"}
log = logging.getLogger("rpd")


def _dataset(cfg: RunConfig, split: str) -> Dataset:
    path = cfg[f"data.{split}"]
    fmt = None if cfg["data.format"] == "auto" else cfg["data.format"]
    if path:
        return load_dataset(path, fmt)
    with resources.as_file(resources.files("rpd") / "data" / f"{split}.jsonl") as p:
        return load_dataset(p, "jsonl")


def _load_checkpoint(path: Path):
    if not path.exists():
        raise DataError(f"checkpoint {path} not found; run the producing subcommand first")
    return load_model(path)


def _write_report(cfg: RunConfig, report, traces, stem: str = "report") -> Path:
    fmt = cfg["run.report_format"]
    return emit_report(report, traces, cfg.out / f"{stem}{REPORT_SUFFIX[fmt]}", fmt)


def cmd_gen_corpus(cfg: RunConfig, args) -> int:
    paths = write_corpus(cfg.out, cfg.seed, args.n_train, args.n_test)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return EXIT_OK


def cmd_train_victim(cfg: RunConfig, args) -> int:
    train, test = _dataset(cfg, "train"), _dataset(cfg, "test")
    victim = train_victim(train, cfg.train_config())
    path = cfg.out / "victim.rpdj"
    save_model(victim, path)
    print(f"victim clean accuracy: {accuracy(victim, test):.4f}")
    print(f"checkpoint: {path}")
    return EXIT_OK


def cmd_sample(cfg: RunConfig, args) -> int:
    train = _dataset(cfg, "train")
    victim = _load_checkpoint(cfg.path_or("data.victim", "victim.rpdj"))
    records = sample_adversaries(victim, train, cfg["attack.attackers"], cfg.attacker_config(), cfg.jobs)
    rows = construct_detection_dataset(train, records)
    path = cfg.out / "augmented.jsonl"
    write_augmented(rows, path)
    succeeded = sum(r.outcome.success for r in records)
    print(f"{len(rows)} rows ({len(train)} natural, {len(records)} attacked, {succeeded} successful)")
    print(f"augmented: {path}")
    return EXIT_OK


def cmd_train_joint(cfg: RunConfig, args) -> int:
    rows = read_augmented(cfg.path_or("data.augmented", "augmented.jsonl"))
    if not rows:
        raise DataError("augmented dataset is empty")
    joint = train_joint(rows, cfg.train_config())
    path = cfg.out / "joint.rpdj"
    save_model(joint, path)
    print(f"checkpoint: {path}")
    return EXIT_OK


def cmd_attack(cfg: RunConfig, args) -> int:
    test = _dataset(cfg, "test")
    key, name = ("data.victim", "victim.rpdj") if args.model == "victim" else ("data.joint", "joint.rpdj")
    model = _load_checkpoint(cfg.path_or(key, name))
    acfg = cfg.attacker_config()
    path = cfg.out / "attacks.jsonl"
    summary = {}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for attacker_id in cfg["attack.eval_attackers"]:
            outcomes = run_attacks(model, [(attacker_id, ex) for ex in test], acfg, cfg.jobs)
            for ex, out in zip(test, outcomes):
                row = {"attacker": attacker_id, "text": ex.sentence.text, "label": ex.label, **out.to_dict()}
                fh.write(json.dumps(row, sort_keys=True) + "\n")
            summary[attacker_id] = {
                "success_rate": sum(o.success for o in outcomes) / len(outcomes),
                "attacked_acc": sum(o.predicted_label == ex.label for ex, o in zip(test, outcomes)) / len(outcomes),
            }
    print(json.dumps(summary, sort_keys=True, indent=2))
    print(f"attacks: {path}")
    return EXIT_OK


def cmd_defend(cfg: RunConfig, args) -> int:
    joint = _load_checkpoint(cfg.path_or("data.joint", "joint.rpdj"))
    if args.input:
        fmt = None if cfg["data.format"] == "auto" else cfg["data.format"]
        sentences = [ex.sentence for ex in load_dataset(args.input, fmt)]
    else:
        sentences = [ex.sentence for ex in _dataset(cfg, "test")]
    traces = defend_all(joint, sentences, cfg.attacker_config(), cfg["defense.attacker"], cfg["defense.rounds"],
                        cfg.jobs)
    path = cfg.out / "traces.jsonl"
    write_traces(traces, path)
    counts: dict[str, int] = {}
    for t in traces:
        counts[t.status] = counts.get(t.status, 0) + 1
    print(json.dumps(counts, sort_keys=True))
    print(f"traces: {path}")
    return EXIT_OK


def _evaluate_existing(cfg: RunConfig):
    joint = _load_checkpoint(Path(cfg["data.joint"]))
    return evaluate_joint(joint, _dataset(cfg, "test"), cfg.attacker_config(), cfg["attack.eval_attackers"],
                          cfg["defense.attacker"], cfg["defense.rounds"], cfg.jobs, cfg.digest(), cfg.seed), joint


def cmd_evaluate(cfg: RunConfig, args) -> int:
    """With ``[data] joint`` set, score that checkpoint; otherwise run every phase from the data."""
    if cfg["data.joint"]:
        ev, _ = _evaluate_existing(cfg)
        report = ev.report
        _write_report(cfg, report, None)
        write_traces(ev.traces, cfg.out / "traces.jsonl")
    else:
        result = run_pipeline(
            _dataset(cfg, "train"), _dataset(cfg, "test"), cfg.attacker_config(), cfg.train_config(),
            sampling_attackers=cfg["attack.attackers"], eval_attackers=cfg["attack.eval_attackers"],
            defense_attacker=cfg["defense.attacker"], rounds=cfg["defense.rounds"], jobs=cfg.jobs,
            config_digest=cfg.digest(),
        )
        write_outputs(result, cfg.out)
        report = result.report
    for k, v in report.metrics.items():
        print(f"{k}: {'n/a' if v is None else f'{v:.4f}'}")
    print(f"reports: {cfg.out}")
    return EXIT_OK


def cmd_analyze(cfg: RunConfig, args) -> int:
    joint = _load_checkpoint(cfg.path_or("data.joint", "joint.rpdj"))
    ev = evaluate_joint(joint, _dataset(cfg, "test"), cfg.attacker_config(), cfg["attack.eval_attackers"],
                        cfg["defense.attacker"], cfg["defense.rounds"], cfg.jobs, cfg.digest(), cfg.seed)
    write_cosine(ev, joint, cfg.out)
    c = ev.cosine
    fmt = lambda v: "n/a" if v is None else f"{v:.4f}"  # noqa: E731
    print(f"delta_adv: {fmt(c.delta_adv)}  delta_rep: {fmt(c.delta_rep)}  pairs: {len(c.adv_pairs)}")
    print(f"cosine: {cfg.out / 'cosine.json'}  vectors: {cfg.out / 'vectors.csv'}")
    return EXIT_OK


COMMANDS: dict[str, tuple[Callable, str]] = {
    "gen-corpus": (cmd_gen_corpus, "write the seeded synthetic corpus and lexicon to --out"),
    "train-victim": (cmd_train_victim, "train the undefended victim classifier"),
    "sample": (cmd_sample, "attack the victim on the training split and write the augmented rows"),
    "train-joint": (cmd_train_joint, "train the three-head joint model on the augmented rows"),
    "attack": (cmd_attack, "attack a checkpoint on the test split"),
    "defend": (cmd_defend, "run detection and repair over a set of texts"),
    "evaluate": (cmd_evaluate, "score the defense with the five metrics (runs all phases by default)"),
    "analyze": (cmd_analyze, "output-similarity analysis and raw vector export"),
}


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = {"default": argparse.SUPPRESS} if suppress else {}
    parser.add_argument("--config", metavar="PATH", help="INI configuration file", **d)
    parser.add_argument("--seed", type=int, metavar="INT", help="overrides [run] seed", **d)
    parser.add_argument("--jobs", type=int, metavar="INT", help="overrides [run] jobs", **d)
    parser.add_argument("--out", metavar="DIR", help="overrides [run] out", **d)
    parser.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config key", **d)


def build_parser() -> argparse.ArgumentParser:
    epilog = schema_help()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="rpd", description="Reactive perturbation defocusing pipeline.",
                                     epilog=epilog, formatter_class=fmt)
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=epilog, formatter_class=fmt)
        _global_flags(p, suppress=True)
        if name in ("sample", "evaluate"):
            p.add_argument("--attackers", metavar="IDS", help="comma-separated sampling attackers ([attack] attackers)")
        if name in ("train-joint", "evaluate"):
            p.add_argument("--ablation", choices=["vanilla-at"], help="train with the vanilla adversarial objective")
        if name == "gen-corpus":
            p.add_argument("--n-train", type=int, default=2000, help="training examples (default 2000)")
            p.add_argument("--n-test", type=int, default=500, help="test examples (default 500)")
        if name == "attack":
            p.add_argument("--model", choices=["victim", "joint"], default="joint", help="checkpoint to attack")
        if name == "defend":
            p.add_argument("--input", metavar="PATH", help="dataset whose texts are defended (default: test split)")
    return parser


def _overrides(args) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    for flag, key in (("seed", "run.seed"), ("jobs", "run.jobs"), ("out", "run.out"),
                      ("attackers", "attack.attackers")):
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = str(value)
    if getattr(args, "ablation", None):
        out["train.objective"] = args.ablation
    return out


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command][0](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # pragma: no cover - last-resort guard
        log.exception("internal error")
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
