"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .labeling import DEFAULT_QUANTILES
from .learn.trees import BoostParams, ForestParams
from .synth import ScenarioConfig


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _strs(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_path(text: str) -> str | None:
    return text.strip() or None


@dataclass(frozen=True)
class RunConfig:
    out: str = "out"
    replay: str | None = None
    mbfc: str | None = None
    quality: str | None = None
    manifest: str | None = None
    window_start: str | None = None
    window_end: str | None = None
    min_posts: int = 10
    majority_lang: str = "en"
    tox_mode: str = "sidecar"
    definitions: tuple[str, ...] = ("raw", "norm")
    quantiles: tuple[float, ...] = DEFAULT_QUANTILES
    seed: int = 0
    jobs: int = 1
    n_estimators: int = 500
    learning_rate: float = 0.1
    max_depth: int = 6
    subsample: float = 1.0
    min_child_weight: float = 1.0
    reg_lambda: float = 1.0
    cv_runs: int = 10
    cv_folds: int = 10
    rf_estimators: int = 100
    rf_max_depth: int = 16
    rf_max_features: str = "sqrt"
    split_ratio: float = 0.8
    regression_bins: int = 20
    second_regressor: str = "boosted"
    second_predictions: str | None = None
    beeswarm_top: int = 10
    beeswarm_quantiles: tuple[float, ...] = (0.1, 0.99)
    bump_top: int = 8
    best_worst_grid: tuple[int, ...] = (1, 2, 4, 8, 16, 32, 64)
    best_worst_runs: int = 10
    ablation: bool = True
    ablation_quantiles: tuple[float, ...] = ()
    pagerank_damping: float = 0.85
    pagerank_tol: float = 1e-10
    pagerank_max_iter: int = 200
    synth: dict = field(default_factory=dict)

    # ------------------------------------------------------------------

    @property
    def boost_params(self) -> BoostParams:
        return BoostParams(
            self.n_estimators, self.learning_rate, self.max_depth, self.subsample, self.min_child_weight, self.reg_lambda
        )

    @property
    def forest_params(self) -> ForestParams:
        mf: str | float | int | None = self.rf_max_features
        if mf in ("none", "all"):
            mf = None
        elif mf not in ("sqrt", "log2"):
            mf = float(mf) if "." in mf else int(mf)
        return ForestParams(self.rf_estimators, self.rf_max_depth, mf, 1.0)

    @property
    def scenario(self) -> ScenarioConfig:
        return ScenarioConfig(**self.synth)

    @property
    def pagerank_params(self) -> dict:
        return {"damping": self.pagerank_damping, "tol": self.pagerank_tol, "max_iter": self.pagerank_max_iter}

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def hash(self) -> str:
        """Digest of every setting that can change an output (not ``out`` or ``jobs``)."""
        d = self.to_dict()
        del d["out"], d["jobs"]
        canonical = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def out_path(self, *parts: str) -> Path:
        return Path(self.out).joinpath(*parts)

    def check_paths(self) -> None:
        for key in ("replay", "mbfc", "quality", "manifest", "second_predictions"):
            p = getattr(self, key)
            if p is not None and not os.path.exists(p):
                raise ConfigError(f"{key} path does not exist: {p}")

    def validate(self) -> None:
        if self.tox_mode not in ("sidecar", "lexicon"):
            raise ConfigError("tox_mode must be sidecar or lexicon")
        for d in self.definitions:
            if d not in ("raw", "norm"):
                raise ConfigError(f"unknown definition {d!r}")
        if self.second_regressor not in ("boosted", "none"):
            raise ConfigError("second_regressor must be boosted or none")
        if not 0.0 < self.split_ratio < 1.0 or self.regression_bins < 1:
            raise ConfigError("split_ratio must lie in (0, 1) and regression_bins be positive")
        if not self.quantiles or any(not 0.0 < q < 1.0 for q in self.quantiles):
            raise ConfigError("quantiles must lie in (0, 1)")
        if (self.window_start is None) != (self.window_end is None):
            raise ConfigError("set both window_start and window_end, or neither")
        if self.min_posts < 1 or self.jobs < 1 or self.cv_runs < 1 or self.cv_folds < 2:
            raise ConfigError("min_posts, jobs, cv_runs must be positive and cv_folds at least 2")
        try:
            self.forest_params
            self.scenario.validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


_PARSERS = {
    "replay": _opt_path,
    "mbfc": _opt_path,
    "quality": _opt_path,
    "manifest": _opt_path,
    "window_start": _opt_path,
    "window_end": _opt_path,
    "definitions": _strs,
    "quantiles": _floats,
    "beeswarm_quantiles": _floats,
    "ablation_quantiles": _floats,
    "second_predictions": _opt_path,
    "best_worst_grid": _ints,
    "ablation": _bool,
}
_SCENARIO_FIELDS = {f.name: f for f in fields(ScenarioConfig)}


def _convert(key: str, text: str, default):
    if key in _PARSERS:
        return _PARSERS[key](text)
    if isinstance(default, bool):
        return _bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text.strip()


def _scenario_value(name: str, text: str):
    default = getattr(ScenarioConfig(), name)
    t = text.strip()
    if t.lower() in ("none", ""):
        return None
    if isinstance(default, bool):
        return _bool(t)
    if isinstance(default, int) and not isinstance(default, bool):
        return int(t)
    if isinstance(default, float) or default is None:
        return float(t)
    return t


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Keys prefixed with ``synth_`` set generator parameters. Relative paths
    are kept as written (resolved against the working directory).
    """
    cfg = base or RunConfig()
    updates = {}
    synth = dict(cfg.synth)
    known = {f.name: f for f in fields(RunConfig)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key.startswith("synth_"):
                name = key[len("synth_"):]
                if name not in _SCENARIO_FIELDS:
                    raise ConfigError(f"line {lineno}: unknown generator key {key!r}")
                synth[name] = _scenario_value(name, value)
            elif key in known and key != "synth":
                updates[key] = _convert(key, value, getattr(cfg, key))
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return replace(cfg, synth=synth, **updates)


def load_config(path: str | os.PathLike | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if k == "synth":
            for sk, sv in sorted(v.items()):
                lines.append(f"synth_{sk} = {'' if sv is None else sv}")
            continue
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {'' if v is None else v}")
    return "\n".join(lines) + "\n"
