"""Experiment configuration files (YAML).

Input paths (``prior.image``, kernel files) are resolved against the config
file's folder; ``output_dir`` against the working directory. Grammar::

    experiment: toy2d | toy3d | adsn-deblur | adsn-generate
    seed: <int>                       # required
    output_dir: <path>                # optional, default "output"
    schedule: {T: 1000, beta_start: 1.0e-4, beta_end: 0.02}   # optional
    prior:
      mean: [..]  cov: [[..], ..]     # toy experiments
      image: <png path>               # ADSN experiments
    problem:                          # all but adsn-generate
      sigma: <float > 0>
      observed: [<coordinate>, ..]    # toys
      observation: [..]               # toys, optional; drawn from the prior if absent
      kernel: {type: bicubic, factor: <int>} | {type: file, path: <path>} | {type: identity}
    models: [cgdm, pigdm, {name: dps, alpha: 0.2}]            # all but adsn-generate
    samples: <int >= 0>               # ADSN only, images written per model (default 1)

The environment variable ``GAUSSDIFF_OUTPUT_DIR`` overrides ``output_dir``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from ..errors import ParameterError
from ..samplers import parse_model
from ..schedule import Schedule, linear_schedule

KINDS = ("toy2d", "toy3d", "adsn-deblur", "adsn-generate")
TOY_DIM = {"toy2d": 2, "toy3d": 3}
OUTPUT_ENV = "GAUSSDIFF_OUTPUT_DIR"
_TOP_KEYS = {"experiment", "seed", "output_dir", "schedule", "prior", "problem", "models", "samples"}


class ConfigError(ParameterError):
    """One or more problems in a configuration file; ``errors`` lists them all."""

    def __init__(self, path, errors):
        self.path = str(path)
        self.errors = list(errors)
        lines = "\n".join(f"  - {e}" for e in self.errors)
        super().__init__(f"invalid config {self.path}:\n{lines}")


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    kind: str
    seed: int
    schedule: Schedule
    output_dir: Path
    models: list
    raw: dict = field(repr=False)
    # toy experiments
    mean: Optional[np.ndarray] = None
    cov: Optional[np.ndarray] = None
    observed: Optional[list] = None
    observation: Optional[np.ndarray] = None
    sigma: Optional[float] = None
    # ADSN experiments
    image: Optional[Path] = None
    kernel: Optional[dict] = None
    samples: int = 1

    @property
    def is_toy(self) -> bool:
        return self.kind in TOY_DIM


def _as_int(x):
    return x if isinstance(x, int) and not isinstance(x, bool) else None


def _as_float(x):
    if isinstance(x, bool):
        return None
    try:
        return float(x)
    except (TypeError, ValueError):
        return None


def _check_schedule(raw, errs) -> Optional[Schedule]:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        errs.append("schedule: must be a mapping with T, beta_start, beta_end")
        return None
    unknown = set(raw) - {"T", "beta_start", "beta_end"}
    if unknown:
        errs.append(f"schedule: unknown keys {sorted(unknown)}")
    T = raw.get("T", 1000)
    b0, b1 = _as_float(raw.get("beta_start", 1e-4)), _as_float(raw.get("beta_end", 0.02))
    if _as_int(T) is None or T < 1:
        errs.append(f"schedule.T: must be a positive integer, got {T!r}")
        return None
    if b0 is None or b1 is None:
        errs.append("schedule.beta_start / beta_end: must be numbers")
        return None
    try:
        return linear_schedule(T, b0, b1)
    except ParameterError as exc:
        errs.append(f"schedule: {exc}")
        return None


def _check_models(raw, errs) -> list:
    if not isinstance(raw, list) or not raw:
        errs.append("models: must be a non-empty list such as [cgdm, pigdm, {name: dps, alpha: 0.2}]")
        return []
    models = []
    for i, spec in enumerate(raw):
        try:
            if isinstance(spec, dict) and str(spec.get("name", "")).lower() == "dps":
                a = _as_float(spec.get("alpha"))
                if a is None:
                    raise ParameterError("DPS needs a numeric alpha")
                if not a > 0:
                    raise ParameterError(f"DPS alpha must be positive, got {spec.get('alpha')!r}")
            models.append(parse_model(spec))
        except ParameterError as exc:
            errs.append(f"models[{i}]: {exc}")
    labels = [m.label for m in models]
    if len(set(labels)) != len(labels):
        errs.append(f"models: duplicate entries {labels}")
    return models


def _check_toy(kind, prior, problem, errs, out):
    d = TOY_DIM[kind]
    mean = prior.get("mean")
    cov = prior.get("cov")
    try:
        mean = np.asarray(mean, dtype=float)
        if mean.shape != (d,):
            errs.append(f"prior.mean: {kind} needs {d} entries, got shape {mean.shape}")
        else:
            out["mean"] = mean
    except (TypeError, ValueError):
        errs.append("prior.mean: must be a list of numbers")
    try:
        cov = np.asarray(cov, dtype=float)
        if cov.shape != (d, d):
            errs.append(f"prior.cov: {kind} needs a {d}x{d} matrix, got shape {cov.shape}")
        elif not np.allclose(cov, cov.T, atol=1e-12):
            errs.append("prior.cov: must be symmetric")
        elif np.linalg.eigvalsh(cov).min() < -1e-12:
            errs.append("prior.cov: must be positive semi-definite")
        else:
            out["cov"] = cov
    except (TypeError, ValueError):
        errs.append("prior.cov: must be a nested list of numbers")
    obs = problem.get("observed")
    if (not isinstance(obs, list) or not obs or any(_as_int(i) is None for i in obs)
            or len(set(obs)) != len(obs)):
        errs.append("problem.observed: must be a non-empty list of distinct coordinate indices")
    elif any(not 0 <= i < d for i in obs):
        errs.append(f"problem.observed: indices must lie in [0, {d - 1}], got {obs}")
    else:
        out["observed"] = list(obs)
    if "observation" in problem:
        try:
            v = np.asarray(problem["observation"], dtype=float)
            if isinstance(obs, list) and v.shape != (len(obs),):
                errs.append(f"problem.observation: needs {len(obs)} entries, got shape {v.shape}")
            else:
                out["observation"] = v
        except (TypeError, ValueError):
            errs.append("problem.observation: must be a list of numbers")


def _check_kernel(raw, base, errs) -> Optional[dict]:
    if not isinstance(raw, dict) or "type" not in raw:
        errs.append("problem.kernel: must be a mapping with a 'type' (bicubic, file or identity)")
        return None
    kind = raw["type"]
    if kind == "bicubic":
        f = raw.get("factor")
        if _as_int(f) is None or f < 1:
            errs.append(f"problem.kernel.factor: must be a positive integer, got {f!r}")
            return None
        return {"type": "bicubic", "factor": f}
    if kind == "file":
        p = raw.get("path")
        if not isinstance(p, str):
            errs.append("problem.kernel.path: missing")
            return None
        path = (base / p).resolve()
        if not path.is_file():
            errs.append(f"problem.kernel.path: file not found: {path}")
            return None
        return {"type": "file", "path": path}
    if kind == "identity":
        return {"type": "identity"}
    errs.append(f"problem.kernel.type: unknown kernel type {kind!r}")
    return None


def parse_config(raw, base: Path = Path("."), source="<config>") -> ExperimentConfig:
    """Validate a parsed mapping; every violation is collected before raising."""
    errs = []
    if not isinstance(raw, dict):
        raise ConfigError(source, ["top level must be a mapping"])
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        errs.append(f"unknown top-level keys {sorted(unknown)}")
    kind = raw.get("experiment")
    if kind not in KINDS:
        errs.append(f"experiment: must be one of {list(KINDS)}, got {kind!r}")
    seed = raw.get("seed")
    if seed is None:
        errs.append("seed: missing (a seed is mandatory)")
    elif _as_int(seed) is None or seed < 0:
        errs.append(f"seed: must be a non-negative integer, got {seed!r}")
    sched = _check_schedule(raw.get("schedule"), errs)
    out_dir = os.environ.get(OUTPUT_ENV) or raw.get("output_dir", "output")
    if not isinstance(out_dir, str):
        errs.append("output_dir: must be a path string")
        out_dir = "output"
    prior = raw.get("prior")
    if not isinstance(prior, dict):
        errs.append("prior: missing or not a mapping")
        prior = {}
    problem = raw.get("problem", {})
    if not isinstance(problem, dict):
        errs.append("problem: must be a mapping")
        problem = {}
    extra = {}
    models = []
    if kind in KINDS and kind != "adsn-generate":
        models = _check_models(raw.get("models"), errs)
        sigma = _as_float(problem.get("sigma"))
        if sigma is None or not sigma > 0:
            errs.append(f"problem.sigma: must be a positive number, got {problem.get('sigma')!r}")
        else:
            extra["sigma"] = sigma
    elif kind == "adsn-generate":
        for key in ("models", "problem"):
            if key in raw:
                errs.append(f"{key}: not used by adsn-generate")
    if kind in TOY_DIM:
        _check_toy(kind, prior, problem, errs, extra)
        if "samples" in raw:
            errs.append("samples: only used by ADSN experiments")
    elif kind in KINDS:
        img = prior.get("image")
        if not isinstance(img, str):
            errs.append("prior.image: missing")
        else:
            path = (base / img).resolve()
            if not path.is_file():
                errs.append(f"prior.image: file not found: {path}")
            else:
                extra["image"] = path
        if kind == "adsn-deblur":
            k = _check_kernel(problem.get("kernel"), base, errs)
            if k is not None:
                extra["kernel"] = k
        n = raw.get("samples", 1)
        if _as_int(n) is None or n < 0:
            errs.append(f"samples: must be a non-negative integer, got {n!r}")
        else:
            extra["samples"] = n
    if errs:
        raise ConfigError(source, errs)
    return ExperimentConfig(kind, seed, sched, Path(out_dir), models, raw, **extra)


def validate_config(path) -> ExperimentConfig:
    """Load and check a YAML config file; raises :class:`ConfigError` listing every problem."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(path, [f"cannot read file: {exc}"]) from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(path, [f"YAML syntax error: {exc}"]) from None
    return parse_config(raw, path.resolve().parent, path)
