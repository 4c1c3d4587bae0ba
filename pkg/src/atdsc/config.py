"""Run configuration: a ``key = value`` file with dotted keys plus overrides.

Example::

    seed = 7
    learner.iterations = 50000
    benchmark.hours = 7-16
    benchmark.methods = ATDSC,REI,MNP
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .benchmark import METHODS, BenchmarkConfig
from .ingestion import BucketConfig
from .learner import LearnerConfig
from .mdp import MdpConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AnomalyConfig:
    c: int = 8
    hidden: int = 32
    lr: float = 0.003
    epochs: int = 100
    batch_size: int = 64
    samples: int = 10_000


@dataclass(frozen=True)
class TravelConfig:
    cruise_mean: float | None = None  # None: city-wide monthly defaults
    cruise_std: float | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    mdp: MdpConfig = MdpConfig()
    learner: LearnerConfig = LearnerConfig()
    anomaly: AnomalyConfig = AnomalyConfig()
    travel: TravelConfig = TravelConfig()
    buckets: BucketConfig = BucketConfig()
    benchmark: BenchmarkConfig = BenchmarkConfig()

    def benchmark_config(self, metric: str | None = None, fixed_fc: bool | None = None,
                         jobs: int | None = None) -> BenchmarkConfig:
        b = self.benchmark
        return dataclasses.replace(
            b,
            seed=self.seed,
            learner=self.learner,
            c=self.anomaly.c,
            metric=metric or b.metric,
            fixed_fc=b.fixed_fc if fixed_fc is None else fixed_fc,
            jobs=jobs or b.jobs,
        )


def _parse_hours(text: str) -> tuple[int, ...]:
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return tuple(out)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_optional_int(text: str) -> int | None:
    return None if text.strip().lower() in ("none", "off", "0") else int(text)


def _parse_optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("none", "") else float(text)


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _parse_methods(text: str) -> tuple[str, ...]:
    methods = tuple(v.strip().upper() for v in text.split(",") if v.strip())
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValueError(f"unknown methods {bad}")
    return methods


_PARSERS = {
    "seed": int,
    "mdp.alpha1": float, "mdp.alpha2": float, "mdp.beta": float, "mdp.omega_abnormal": float,
    "mdp.lam": float, "mdp.abnormal_threshold": float,
    "learner.gamma": float, "learner.eta": float, "learner.eta_decay": float, "learner.decay_every": int,
    "learner.iterations": int, "learner.tau": _parse_optional_int, "learner.budget": float,
    "learner.epsilon": _parse_optional_float,
    "anomaly.c": int, "anomaly.hidden": int, "anomaly.lr": float, "anomaly.epochs": int,
    "anomaly.batch_size": int, "anomaly.samples": int,
    "travel.cruise_mean": _parse_optional_float, "travel.cruise_std": _parse_optional_float,
    "buckets.day_kinds": str,
    "benchmark.runs": int, "benchmark.hours": _parse_hours, "benchmark.methods": _parse_methods,
    "benchmark.months": _parse_ints, "benchmark.metric": str, "benchmark.fixed_fc": _parse_bool,
    "benchmark.chain_hours": _parse_bool, "benchmark.jobs": int,
}

KNOWN_KEYS = tuple(sorted(_PARSERS))


def parse_assignments(lines: Iterable[str], source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        out[key.strip()] = value.strip()
    return out


def build_run_config(values: dict[str, str]) -> RunConfig:
    sections: dict[str, dict] = {"": {}}
    for key, text in values.items():
        if key not in _PARSERS:
            raise ConfigError(f"unknown configuration key {key!r}")
        try:
            value = _PARSERS[key](text)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
        section, _, name = key.rpartition(".")
        sections.setdefault(section, {})[name] = value
    try:
        return RunConfig(
            seed=sections[""].get("seed", 0),
            mdp=MdpConfig(**sections.get("mdp", {})),
            learner=LearnerConfig(**sections.get("learner", {})),
            anomaly=AnomalyConfig(**sections.get("anomaly", {})),
            travel=TravelConfig(**sections.get("travel", {})),
            buckets=BucketConfig(**sections.get("buckets", {})),
            benchmark=BenchmarkConfig(**sections.get("benchmark", {})),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_run_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> RunConfig:
    values: dict[str, str] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"configuration file not found: {p}")
        values.update(parse_assignments(p.read_text(encoding="utf-8").splitlines(), str(p)))
    values.update(parse_assignments(overrides, "--set"))
    return build_run_config(values)
