"""Run configuration: a plain-text, sectioned ``key = value`` file.

Grammar: ``[section]`` headers, then ``key = value`` lines whose values are
JSON literals (numbers, strings in double quotes, lists, ``true``/``false``,
``null``). ``#`` starts a comment line. Unknown sections or keys are errors.
Sections::

    [run]          scenario, seed, out_dir, ensemble_size, chunk_size, ...
    [task]         TaskSpec overrides
    [curriculum]   CurriculumSchedule
    [weights]      DistanceWeights
    [limits]       ForceLimits
    [gfm_learner]  LearnerConfig for GFM training
    [task_learner] LearnerConfig for task policies
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from gfmsim.distance import DistanceWeights
from gfmsim.dynamics.scenarios import SCENARIOS
from gfmsim.errors import ConfigurationError
from gfmsim.harness import CurriculumSchedule, TaskSpec
from gfmsim.hybrid import ForceLimits
from gfmsim.rl.learner import LearnerConfig


def default_gfm_learner() -> LearnerConfig:
    return LearnerConfig(
        gamma=0.9, hidden=(32, 32), init_std=0.1, critic_lr=1e-3, batch_size=32, segment_length=10,
        min_replay=500, updates_per_step=0.5, target_update_period=50, squash_actions=True,
    )


def default_task_learner() -> LearnerConfig:
    return LearnerConfig(
        gamma=0.98, hidden=(64, 64), init_std=0.5, critic_lr=1e-3, batch_size=32, segment_length=10,
        min_replay=1000, updates_per_step=0.25, target_update_period=100, squash_actions=True,
    )


@dataclass(frozen=True)
class RunSettings:
    """Scalar pipeline settings (the ``[run]`` section)."""

    scenario: str = "pusher-position"
    seed: int = 0
    out_dir: str = "runs"
    ensemble_size: int = 3
    chunk_size: int = 5
    collect_ticks: int = 120
    gfm_episodes: int = 300
    gfm_critic_features: bool = True
    gfm_select_every: int = 25
    task_episodes: int = 0
    eval_trials: int = 5
    sysid_starts: int = 8
    variants: tuple[str, ...] = ("default", "default-nocurriculum", "random-force", "hybrid")

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {self.scenario!r}; valid names: {', '.join(SCENARIOS)}")
        object.__setattr__(self, "variants", tuple(self.variants))
        bad = set(self.variants) - set(VARIANTS)
        if bad:
            raise ConfigurationError(f"unknown variants {sorted(bad)}; valid: {', '.join(VARIANTS)}")
        if self.ensemble_size < 1 or self.chunk_size < 1:
            raise ConfigurationError("ensemble_size and chunk_size must be >= 1")


VARIANTS = ("default", "default-nocurriculum", "random-force", "hybrid")


@dataclass(frozen=True)
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    task: TaskSpec = field(default_factory=TaskSpec)
    curriculum: CurriculumSchedule = field(default_factory=CurriculumSchedule)
    weights: DistanceWeights = field(default_factory=DistanceWeights)
    limits: ForceLimits = field(default_factory=ForceLimits)
    gfm_learner: LearnerConfig = field(default_factory=default_gfm_learner)
    task_learner: LearnerConfig = field(default_factory=default_task_learner)

    SECTIONS = ("run", "task", "curriculum", "weights", "limits", "gfm_learner", "task_learner")

    # -- accessors
    @property
    def scenario(self) -> str:
        return self.run.scenario

    @property
    def seed(self) -> int:
        return self.run.seed

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, run=dataclasses.replace(self.run, seed=int(seed)))

    def with_out(self, out_dir: str) -> "RunConfig":
        return dataclasses.replace(self, run=dataclasses.replace(self.run, out_dir=str(out_dir)))

    # -- serialisation
    def to_dict(self) -> dict:
        return {name: _as_plain(dataclasses.asdict(getattr(self, name))) for name in self.SECTIONS}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(cls.SECTIONS)
        if unknown:
            raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
        types = {f.name: f.default_factory for f in dataclasses.fields(cls)}
        kwargs = {}
        for name in cls.SECTIONS:
            base = types[name]()
            if name == "task" and kwargs["run"].scenario == "pusher-pose":
                base = TaskSpec.pose()
            values = d.get(name, {})
            allowed = {f.name for f in dataclasses.fields(base)}
            bad = set(values) - allowed
            if bad:
                raise ConfigurationError(f"unknown keys in [{name}]: {sorted(bad)}")
            merged = {**dataclasses.asdict(base), **values}
            for k, v in merged.items():
                if isinstance(v, list):
                    merged[k] = tuple(v)
            try:
                kwargs[name] = type(base)(**merged)
            except (TypeError, ValueError) as exc:
                raise ConfigurationError(f"invalid [{name}] section: {exc}") from exc
        return cls(**kwargs)

    def dumps(self) -> str:
        lines = []
        for name, values in self.to_dict().items():
            lines.append(f"[{name}]")
            for k in sorted(values):
                lines.append(f"{k} = {json.dumps(values[k], sort_keys=True)}")
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def loads(cls, text: str, source: str = "<string>") -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), delimiters=("=",))
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigurationError(f"{source}: {exc}") from exc
        d = {}
        for section in parser.sections():
            d[section] = {}
            for key, raw in parser.items(section):
                try:
                    d[section][key] = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise ConfigurationError(f"{source}: [{section}] {key}: value {raw!r} is not a JSON literal") from exc
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file not found: {p}")
        return cls.loads(p.read_text(), str(p))

    def content_hash(self) -> str:
        """SHA-256 over the canonical serialisation, excluding the output directory."""
        d = self.to_dict()
        d["run"].pop("out_dir")
        d["run"].pop("seed")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def run_dir(self) -> Path:
        return Path(self.run.out_dir) / f"{self.scenario}-{self.content_hash()[:12]}-seed{self.seed}"


def _as_plain(x):
    if isinstance(x, dict):
        return {k: _as_plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_as_plain(v) for v in x]
    return x


def resolve_seed(cli_seed: int | None, config: RunConfig) -> int:
    """``--seed`` wins, then the ``RUN_SEED`` environment variable, then the config."""
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ.get("RUN_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigurationError(f"RUN_SEED must be an integer, got {env!r}") from exc
    return config.seed
