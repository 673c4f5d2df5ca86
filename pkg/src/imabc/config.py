"""Run configuration files (JSON) and model construction."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .distributions import PriorSet, load_priors
from .engine import EngineConfig
from .targets import load_targets

MODELS = ("crcspin", "conjugate", "bimodal")
ENGINE_KEYS = {f.name for f in fields(EngineConfig)} - {"seed"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: str
    seed: int
    engine: dict = field(default_factory=dict)
    priors: str | None = None
    targets: str | None = None
    populations: dict[str, str] = field(default_factory=dict)
    life_table: str | None = None
    sample_sizes: dict[str, int] = field(default_factory=dict)
    model_options: dict = field(default_factory=dict)
    workers: int = 1
    output_dir: str = "imabc_out"

    def engine_config(self) -> EngineConfig:
        return EngineConfig(seed=self.seed, **self.engine)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _resolve(base: Path, p):
    if p is None:
        return None
    q = Path(p)
    return str(q if q.is_absolute() else (base / q).resolve())


def _require_file(path, what):
    if path is not None and not Path(path).is_file():
        raise ConfigError(f"{what} file not found: {path}")


def parse_config(d: dict, base_dir: str | Path = ".") -> RunConfig:
    base = Path(base_dir)
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(d) - {f.name for f in fields(RunConfig)}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "seed" not in d:
        raise ConfigError("config must set 'seed'")
    model = d.get("model")
    if model not in MODELS:
        raise ConfigError(f"model must be one of {MODELS}, got {model!r}")
    bad = set(d.get("engine", {})) - ENGINE_KEYS
    if bad:
        raise ConfigError(f"unknown engine keys: {sorted(bad)}")
    cfg = RunConfig(
        model=model, seed=int(d["seed"]), engine=dict(d.get("engine", {})),
        priors=_resolve(base, d.get("priors")), targets=_resolve(base, d.get("targets")),
        populations={k: _resolve(base, v) for k, v in d.get("populations", {}).items()},
        life_table=_resolve(base, d.get("life_table")),
        sample_sizes={k: int(v) for k, v in d.get("sample_sizes", {}).items()},
        model_options=dict(d.get("model_options", {})), workers=int(d.get("workers", 1)),
        output_dir=_resolve(base, d.get("output_dir", "imabc_out")))
    _require_file(cfg.priors, "prior")
    _require_file(cfg.targets, "target")
    _require_file(cfg.life_table, "life table")
    for study, p in cfg.populations.items():
        _require_file(p, f"population ({study})")
    try:
        cfg.engine_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid engine settings: {exc}") from None
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(d, path.parent)


def build_model(cfg: RunConfig):
    """Return ``(model, targets)`` for a run configuration."""
    if cfg.model == "crcspin":
        from .crcspin.model import CRCSpinModel, default_priors, default_targets
        from .crcspin.population import LifeTable, load_populations

        priors = load_priors(cfg.priors) if cfg.priors else default_priors()
        targets = load_targets(cfg.targets) if cfg.targets else default_targets()
        life = LifeTable.from_csv(cfg.life_table) if cfg.life_table else LifeTable.default()
        model = CRCSpinModel(priors, targets, load_populations(cfg.populations), life,
                             cfg.sample_sizes or None,
                             perfect_detection=bool(cfg.model_options.get("perfect_detection", False)))
        return model, targets
    from .reference import ConjugateNormalModel, SymmetricBimodalModel, default_conjugate

    opts = dict(cfg.model_options)
    try:
        if cfg.model == "conjugate":
            model = ConjugateNormalModel(**opts) if opts else default_conjugate()
        else:
            model = SymmetricBimodalModel(**opts)
    except TypeError as exc:
        raise ConfigError(f"invalid model_options: {exc}") from None
    targets = load_targets(cfg.targets) if cfg.targets else model.targets()
    if cfg.priors:
        model.priors = _checked_priors(load_priors(cfg.priors), model.priors)
    return model, targets


def _checked_priors(new: PriorSet, old: PriorSet) -> PriorSet:
    if new.dim != old.dim:
        raise ConfigError("reference models take exactly one parameter")
    return new

