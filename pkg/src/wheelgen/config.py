"""YAML run configuration: ``pipeline``, ``simp`` and ``began`` sections with strict keys."""
from __future__ import annotations

import dataclasses
from pathlib import Path

import yaml

from .began import BeganConfig
from .pipeline import PipelineConfig
from .topopt import SimpConfig

SECTIONS = {"pipeline": PipelineConfig, "simp": SimpConfig, "began": BeganConfig}

COMMENTS = {
    "pipeline": {
        "similarity_levels": "similarity weights applied to every reference",
        "force_ratio_levels": "rim normal/shear traction ratios",
        "dedup_threshold": "minimum binarized L1 distance as a fraction of the pixel count",
        "termination_threshold": "continue while new/accumulated designs >= this ratio",
        "max_iterations": "hard cap on exploration iterations",
        "began_samples": "generator samples drawn per iteration before dedup",
        "max_generator_references": "cap on generator-sampled references per iteration (0 = all)",
        "previous_count": "synthetic previous designs when none are supplied",
        "resolution": "elements per side of the wheel domain",
        "workers": "topology optimization processes (WHEELGEN_WORKERS overrides)",
        "seed": "master seed for synthetic data and sampling",
        "evaluation_force_ratio": "load case used to score every design",
        "binarize_threshold": "pixels at or above this become solid",
        "novelty_epochs": "training epochs of the novelty autoencoder",
        "novelty_split": "training share of the previous designs",
    },
    "simp": {
        "p": "penalization exponent",
        "E0": "solid modulus",
        "E_min": "void modulus",
        "nu": "Poisson ratio",
        "r_min": "filter radius in elements",
        "move": "OC move limit",
        "eta": "OC damping exponent",
        "tol": "convergence tolerance on max density change",
        "max_iterations": "optimization iteration cap",
        "beta_initial": "initial projection sharpness",
        "beta_growth": "projection sharpness multiplier",
        "beta_cap": "maximum projection sharpness",
        "beta_interval": "iterations between sharpness increases",
        "filter_mode": "density (three-field) or sensitivity (one-field)",
        "solver_tol": "linear solver relative tolerance (null = automatic)",
        "lagrange_bracket": "bisection bracket for the volume multiplier",
        "bisection_iterations": "bisection iteration cap",
    },
    "began": {
        "latent_dim": "latent vector size",
        "gamma": "diversity ratio",
        "lambda_k": "proportional gain of the balance controller",
        "k_initial": "initial balance controller value",
        "batch_size": "minibatch size",
        "norm": "reconstruction loss exponent (1 or 2)",
        "learning_rate": "Adam learning rate",
        "epochs": "training epochs per iteration",
        "side": "training image side (multiple of 8 times a power of two)",
        "base_channels": "convolution channels of the first stage",
        "seed": "initialization and sampling seed",
        "typeset_convergence": "use the gamma-outside convergence measure variant",
        "checkpoint_every": "epochs between checkpoints (0 = end only)",
    },
}


class ConfigError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class RunConfigFile:
    pipeline: PipelineConfig = PipelineConfig()
    simp: SimpConfig = SimpConfig()
    began: BeganConfig = BeganConfig()


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def _coerce(cls, key: str, value):
    default = {f.name: f.default for f in dataclasses.fields(cls)}[key]
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{cls.__name__}.{key} must be a list")
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{cls.__name__}.{key} must be true or false")
        return value
    if isinstance(default, int) and not isinstance(value, int):
        raise ConfigError(f"{cls.__name__}.{key} must be an integer")
    if isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    return value


def config_from_dict(data: dict | None) -> RunConfigFile:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of sections")
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    built = {}
    for name, cls in SECTIONS.items():
        section = data.get(name)
        if section is None:
            section = {}
        if not isinstance(section, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        names = {f.name for f in dataclasses.fields(cls)}
        bad = set(section) - names
        if bad:
            raise ConfigError(f"unknown key(s) in {name}: {', '.join(sorted(bad))}")
        try:
            built[name] = cls(**{k: _coerce(cls, k, v) for k, v in section.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {name} settings: {exc}") from exc
    return RunConfigFile(**built)


def load_config(path: str | Path) -> RunConfigFile:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}".replace("\n", " ")) from exc
    return config_from_dict(data)


def config_to_dict(cfg: RunConfigFile) -> dict:
    return {name: {k: _plain(v) for k, v in dataclasses.asdict(getattr(cfg, name)).items()}
            for name in SECTIONS}


def dump_config(cfg: RunConfigFile = RunConfigFile()) -> str:
    """YAML text with every key present and a comment per key."""
    lines = ["# wheelgen run configuration; unknown keys are rejected"]
    for name, values in config_to_dict(cfg).items():
        lines.append(f"{name}:")
        for key, value in values.items():
            text = yaml.safe_dump(value, default_flow_style=True).strip()
            if text.endswith("\n...") or text.endswith("..."):
                text = text.rsplit("\n", 1)[0].strip()
            lines.append(f"  {key}: {text}  # {COMMENTS[name][key]}")
    return "\n".join(lines) + "\n"
