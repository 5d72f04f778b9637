"""Run configuration: an INI file with fixed sections, overridable by flags.

Every key, its default and a one-line description live in ``SCHEMA``; the CLI
renders it into ``--help`` and the loader rejects anything not listed there.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable

from .attackers import ATTACKERS, DEFAULT_STOPWORDS, AttackerConfig
from .model import TrainConfig
from .text import SynonymLexicon, load_lexicon


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (CLI exit code 2)."""


def _attacker_list(raw: str) -> tuple[str, ...]:
    ids = tuple(a.strip() for a in raw.split(",") if a.strip())
    if not ids:
        raise ConfigError("attacker list is empty")
    for a in ids:
        if a not in ATTACKERS:
            raise ConfigError(f"unknown attacker {a!r}; choose from {', '.join(sorted(ATTACKERS))}")
    return ids


def _orders(raw: str) -> tuple[int, ...]:
    return tuple(int(x) for x in raw.split(",") if x.strip())


def _optional_path(raw: str) -> str:
    return raw.strip()


def _choice(*options: str) -> Callable[[str], str]:
    def parse(raw: str) -> str:
        if raw not in options:
            raise ConfigError(f"expected one of {', '.join(options)}, got {raw!r}")
        return raw
    return parse


@dataclass(frozen=True)
class Key:
    section: str
    name: str
    default: str
    parse: Callable[[str], Any]
    help: str


SCHEMA: tuple[Key, ...] = (
    Key("data", "train", "", _optional_path, "training split (jsonl or csv); empty = bundled corpus"),
    Key("data", "test", "", _optional_path, "held-out split used for evaluation; empty = bundled corpus"),
    Key("data", "lexicon", "", _optional_path, "synonym lexicon (word<TAB>syn1,syn2,...); empty = bundled"),
    Key("data", "format", "auto", _choice("auto", "jsonl", "csv"), "dataset format; auto uses the file suffix"),
    Key("data", "victim", "", _optional_path, "victim checkpoint to load; empty = <out>/victim.rpdj"),
    Key("data", "joint", "", _optional_path, "joint checkpoint to load; empty = <out>/joint.rpdj"),
    Key("data", "augmented", "", _optional_path, "augmented rows to load; empty = <out>/augmented.jsonl"),
    Key("attack", "attackers", "pwws,gradimp,delimp", _attacker_list, "attackers used for adversary sampling"),
    Key("attack", "eval_attackers", "pwws", _attacker_list, "attackers used to build the evaluation partition"),
    Key("attack", "max_sub_ratio", "0.4", float, "fraction of tokens an attack may replace"),
    Key("attack", "query_budget", "2000", int, "model queries allowed per attacked example"),
    Key("attack", "stopwords", "default", _choice("default", "none"), "stopword list skipped by attackers"),
    Key("train", "learning_rate", "0.1", float, "SGD step size"),
    Key("train", "batch_size", "16", int, "mini-batch size"),
    Key("train", "epochs", "5", int, "passes over the training rows"),
    Key("train", "alpha", "5.0", float, "weight of the detection loss"),
    Key("train", "beta", "5.0", float, "weight of the adversarial-label loss"),
    Key("train", "l2", "1e-5", float, "L2 coefficient on all parameters"),
    Key("train", "max_tokens", "80", int, "tokens kept per input before featurizing"),
    Key("train", "buckets", "262144", int, "hashed feature buckets"),
    Key("train", "orders", "1,2", _orders, "n-gram orders, comma separated"),
    Key("train", "objective", "decoupled", _choice("decoupled", "vanilla-at"),
        "decoupled heads, or vanilla-at (adversarial labels drive the standard head)"),
    Key("defense", "attacker", "pwws", lambda raw: _attacker_list(raw)[0], "attacker used for repair"),
    Key("defense", "rounds", "3", int, "repair rounds; each widens max_sub_ratio by 0.2"),
    Key("run", "seed", "42", int, "seed for shuffling and randomized attackers"),
    Key("run", "jobs", "1", int, "worker processes for attack and defense phases"),
    Key("run", "out", "out", str, "output directory"),
    Key("run", "report_format", "json", _choice("json", "csv", "markdown"), "format of the primary report file"),
)
SECTIONS = tuple(dict.fromkeys(k.section for k in SCHEMA))
# keys that change how work is scheduled or where it lands, not what is computed
NON_SEMANTIC = {("run", "jobs"), ("run", "out")}


def schema_help() -> str:
    lines = ["configuration keys (INI sections; flags override file values):"]
    for section in SECTIONS:
        lines.append(f"  [{section}]")
        for k in SCHEMA:
            if k.section == section:
                lines.append(f"    {k.name} = {k.default or '(empty)'}  -- {k.help}")
    return "\n".join(lines)


@dataclass(frozen=True)
class RunConfig:
    values: dict[tuple[str, str], Any]
    raw: dict[tuple[str, str], str]

    def __getitem__(self, key: str) -> Any:
        section, name = key.split(".", 1)
        return self.values[(section, name)]

    @property
    def seed(self) -> int:
        return self["run.seed"]

    @property
    def jobs(self) -> int:
        return self["run.jobs"]

    @property
    def out(self) -> Path:
        return Path(self["run.out"])

    def path_or(self, key: str, default_name: str) -> Path:
        value = self[key]
        return Path(value) if value else self.out / default_name

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self["train.learning_rate"], batch_size=self["train.batch_size"],
            epochs=self["train.epochs"], alpha=self["train.alpha"], beta=self["train.beta"], l2=self["train.l2"],
            seed=self.seed, max_tokens=self["train.max_tokens"], buckets=self["train.buckets"],
            orders=self["train.orders"], objective=self["train.objective"],
        )

    def lexicon(self) -> SynonymLexicon:
        path = self["data.lexicon"]
        if path:
            return load_lexicon(path)
        with resources.as_file(resources.files("rpd") / "data" / "lexicon.tsv") as p:
            return load_lexicon(p)

    def attacker_config(self, lexicon: SynonymLexicon | None = None) -> AttackerConfig:
        stop = DEFAULT_STOPWORDS if self["attack.stopwords"] == "default" else frozenset()
        return AttackerConfig(
            lexicon=self.lexicon() if lexicon is None else lexicon,
            max_sub_ratio=self["attack.max_sub_ratio"], query_budget=self["attack.query_budget"],
            stopwords=stop, seed=self.seed,
        )

    def digest(self) -> str:
        """SHA-256 over the canonical semantic configuration (jobs and out excluded)."""
        canon = {f"{s}.{n}": v for (s, n), v in sorted(self.raw.items()) if (s, n) not in NON_SEMANTIC}
        return hashlib.sha256(json.dumps(canon, sort_keys=True).encode("utf-8")).hexdigest()


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (``section.key`` -> raw string)."""
    known = {(k.section, k.name): k for k in SCHEMA}
    raw = {key: k.default for key, k in known.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
        except configparser.Error as e:
            raise ConfigError(f"{path}: {e}") from None
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for name, value in parser.items(section):
                if (section, name) not in known:
                    raise ConfigError(f"{path}: unknown key {name!r} in [{section}]")
                raw[(section, name)] = value.strip()
    for dotted, value in (overrides or {}).items():
        section, _, name = dotted.partition(".")
        if (section, name) not in known:
            raise ConfigError(f"unknown key {dotted!r}")
        raw[(section, name)] = str(value)
    values = {}
    for key, spec in known.items():
        try:
            values[key] = spec.parse(raw[key])
        except ConfigError as e:
            raise ConfigError(f"[{key[0]}] {key[1]}: {e}") from None
        except ValueError:
            raise ConfigError(f"[{key[0]}] {key[1]}: cannot parse {raw[key]!r}") from None
    cfg = RunConfig(values, raw)
    try:
        cfg.train_config()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if not 0 < cfg["attack.max_sub_ratio"] <= 1:
        raise ConfigError("[attack] max_sub_ratio must be in (0, 1]")
    if cfg["attack.query_budget"] < 1:
        raise ConfigError("[attack] query_budget must be at least 1")
    if cfg["defense.rounds"] < 1:
        raise ConfigError("[defense] rounds must be at least 1")
    if cfg.jobs < 1:
        raise ConfigError("[run] jobs must be at least 1")
    return cfg
