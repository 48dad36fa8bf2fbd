"""Experiment configuration: one TOML or JSON file per run.

The resolved configuration (with presets expanded to explicit vectors) is
embedded in every output together with a content hash, so results remain
attributable to the exact inputs that produced them.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import NonlinearityConfig
from .model import SpectralModel, TimeGrid

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["ConfigError", "ExperimentConfig", "load_config"]


class ConfigError(ValueError):
    """A configuration file failed validation."""


@dataclass
class ExperimentConfig:
    model: SpectralModel
    grid: TimeGrid
    nonlinearity: NonlinearityConfig
    x: np.ndarray
    y: np.ndarray
    seed: int = 0
    n_paths: int = 10_000
    n_x: int = 64
    n_y: int = 256
    n_samples: int = 100_000
    p: float = 2.0
    q: float = 2.0
    out_dir: str | None = None
    threads: int = 1
    strict_determinism: bool = False
    raw: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        try:
            return cls._build(raw, base_dir or Path.cwd())
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def _build(cls, raw: dict, base_dir: Path) -> "ExperimentConfig":
        if "model" not in raw:
            raise ConfigError("config requires a [model] section")
        model = SpectralModel.from_dict(raw["model"])

        grid_spec = raw.get("grid", {})
        T = float(grid_spec.get("T", 1.0))
        if "n_steps" in grid_spec:
            grid = TimeGrid.uniform(T, int(grid_spec["n_steps"]))
        else:
            grid = TimeGrid.refined(
                T,
                dt_max=float(grid_spec.get("dt_max", T / 500.0)),
                cluster=float(grid_spec.get("cluster", 0.02)),
                epsilon=float(grid_spec.get("epsilon", 1e-4 * T)),
            )

        nl_spec = dict(raw.get("nonlinearity", {"kind": "zero"}))
        if "table_path" in nl_spec:
            nl_spec["table_path"] = str((base_dir / nl_spec["table_path"]).resolve())
        nonlinearity = NonlinearityConfig.from_dict(nl_spec)

        x = _resolve_endpoint(raw.get("x", {"preset": "zero"}), model)
        y = _resolve_endpoint(raw.get("y", {"preset": "zero"}), model)

        budgets = raw.get("budgets", {})
        norm = raw.get("norm", {})
        cfg = cls(
            model=model,
            grid=grid,
            nonlinearity=nonlinearity,
            x=x,
            y=y,
            seed=int(raw.get("seed", 0)),
            n_paths=int(budgets.get("n_paths", 10_000)),
            n_x=int(budgets.get("n_x", 64)),
            n_y=int(budgets.get("n_y", 256)),
            n_samples=int(budgets.get("n_samples", 100_000)),
            p=float(norm.get("p", 2.0)),
            q=float(norm.get("q", 2.0)),
            out_dir=raw.get("output", {}).get("dir"),
            threads=int(raw.get("threads", 1)),
            strict_determinism=bool(raw.get("strict_determinism", False)),
            raw=raw,
        )
        if cfg.n_paths < 2:
            raise ConfigError("budgets.n_paths must be at least 2")
        if min(cfg.n_x, cfg.n_y) < 8:
            raise ConfigError("budgets.n_x and budgets.n_y must be at least 8")
        return cfg

    def resolved(self) -> dict:
        """Fully explicit configuration: presets expanded, defaults applied."""
        return {
            "model": {
                "n_modes": self.model.n_modes,
                "alpha": self.model.alpha.tolist(),
                "lambda": self.model.lam.tolist(),
                "basis": self.model.basis,
            },
            "grid": {
                "T": self.grid.horizon,
                "n_nodes": len(self.grid.nodes),
                "epsilon_cutoff": self.grid.epsilon_cutoff,
            },
            "nonlinearity": {
                "kind": self.nonlinearity.kind,
                "amplitude": self.nonlinearity.amplitude,
                "space": self.nonlinearity.space,
                "active_modes": self.nonlinearity.active_modes,
            },
            "x": self.x.tolist(),
            "y": self.y.tolist(),
            "seed": self.seed,
            "budgets": {
                "n_paths": self.n_paths,
                "n_x": self.n_x,
                "n_y": self.n_y,
                "n_samples": self.n_samples,
            },
            "norm": {"p": self.p, "q": self.q},
            "threads": self.threads,
            "strict_determinism": self.strict_determinism,
        }

    def content_hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def _resolve_endpoint(spec, model: SpectralModel) -> np.ndarray:
    """An endpoint is an explicit vector or a named preset with a scale."""
    if isinstance(spec, (list, tuple)):
        vec = np.asarray(spec, dtype=float)
        if vec.shape != (model.n_modes,):
            raise ConfigError(
                f"endpoint vector has length {len(vec)}, model has {model.n_modes} modes"
            )
        return vec
    if isinstance(spec, (int, float)):
        return np.full(model.n_modes, float(spec))
    if isinstance(spec, dict):
        preset = spec.get("preset", "zero")
        scale = float(spec.get("scale", 1.0))
        n = model.n_modes
        if preset == "zero":
            return np.zeros(n)
        if preset == "first-mode":
            vec = np.zeros(n)
            vec[0] = scale
            return vec
        if preset == "decay":
            return scale * np.arange(1, n + 1, dtype=float) ** -2.0
        if preset == "constant":
            return np.full(n, scale)
        raise ConfigError(f"unknown endpoint preset {preset!r}")
    raise ConfigError(f"cannot interpret endpoint spec {spec!r}")


def load_config(path) -> dict:
    """Parse a TOML or JSON config file into a raw mapping."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_bytes()
    if path.suffix.lower() == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    try:
        return tomllib.loads(text.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
