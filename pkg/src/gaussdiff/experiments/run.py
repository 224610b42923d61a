"""Experiment orchestration: compute curves and write CSV, JSON and PNG outputs."""
from __future__ import annotations

import csv
import json
import re
import sys
from pathlib import Path

import numpy as np
import scipy

from .. import __version__
from ..adsn import adsn_sample, ddpm_generate, read_png, texton_from_image, write_png
from ..analysis import forward_consistency_defect, propagate, propagate_exact_backward, wasserstein_curve
from ..deblur import (
    bicubic_zoom_kernel,
    deblur_wasserstein_curves,
    identity_kernel,
    load_kernel,
    make_observation,
    simulate_spectral,
    spectral_problem,
)
from ..errors import NumericalInstabilityError, ParameterError
from ..gaussian import GaussianLaw, LinearInverseProblem, condition_on_observation, wasserstein2
from .config import ConfigError, ExperimentConfig

EXIT_OK, EXIT_CONFIG, EXIT_UNSTABLE, EXIT_IO = 0, 2, 3, 4
CSV_FIELDS = ("t", "model", "w_total", "w_ker", "w_perp", "mean_bias_norm")


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if not np.isfinite(x):
        raise NumericalInstabilityError("output", -1, f"non-finite value {x} in curves")
    return repr(x)


def write_curves(path, curves) -> None:
    """One row per ``(t, model)``, ``t`` descending; empty cells where no split exists."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for curve in curves:
            for row in curve.rows():
                w.writerow([row["t"], row["model"]] + [_fmt(row[k]) for k in CSV_FIELDS[2:]])


def read_curves(path) -> list:
    """Rows of a curves.csv as dicts with floats (``None`` for empty cells)."""
    with open(path, newline="") as fh:
        rows = []
        for r in csv.DictReader(fh):
            rows.append({k: (int(v) if k == "t" else v if k == "model" else (float(v) if v else None))
                         for k, v in r.items()})
    return rows


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, Path):
        return str(x)
    return x


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", label).strip("_")


def _curve_summary(c) -> dict:
    out = {"w_total_t0": float(c.w_total[0]), "w_total_T": float(c.w_total[-1]),
           "w_total_max": float(c.w_total.max()), "mean_bias_t0": float(c.mean_bias[0])}
    if c.w_ker is not None:
        out["w_ker_t0"] = float(c.w_ker[0])
        out["w_perp_t0"] = float(c.w_perp[0])
    return out


def toy_problem(cfg: ExperimentConfig, rng: np.random.Generator):
    """Prior and inpainting problem of a toy config; ``v`` is drawn if not given."""
    prior = GaussianLaw(cfg.mean, cfg.cov)
    d = len(cfg.mean)
    A = np.eye(d)[cfg.observed]
    prob = LinearInverseProblem(A, cfg.sigma)
    if cfg.observation is not None:
        v = cfg.observation
    else:
        v = prob.observe(prior.sample(rng), rng)
    return prior, prob.with_observation(v)


def _run_toy(cfg: ExperimentConfig, out: Path) -> dict:
    rng = np.random.default_rng(cfg.seed)
    sched = cfg.schedule
    prior, prob = toy_problem(cfg, rng)
    curves = [wasserstein_curve(m, prior, prob, sched, trajectory=propagate(m, prior, prob, sched))
              for m in cfg.models]
    write_curves(out / "curves.csv", curves)
    post = condition_on_observation(prior, prob)
    exact = propagate_exact_backward(prior, prob, sched)
    exact_gap = max(
        wasserstein2(exact.law(t), GaussianLaw(np.sqrt(ab) * post.mean, ab * post.cov + (1 - ab) * np.eye(prior.dim)))
        for t, ab in enumerate(sched.alpha_bars)
    )
    probe = sorted({1, sched.T // 4, sched.T // 2, sched.T})
    defects = {}
    for m in cfg.models:
        try:
            defects[m.label] = {str(t): forward_consistency_defect(m, prior, prob, sched, t) for t in probe}
        except ParameterError:
            defects[m.label] = None
    return {
        "observation": prob.v,
        "posterior": {"mean": post.mean, "cov": post.cov},
        "models": {c.model: _curve_summary(c) for c in curves},
        "diagnostics": {"exact_backward_max_w2": exact_gap, "forward_consistency_defect": defects},
    }


def _kernel(cfg: ExperimentConfig):
    k = cfg.kernel
    if k["type"] == "bicubic":
        return bicubic_zoom_kernel(k["factor"])
    if k["type"] == "file":
        return load_kernel(k["path"])
    return identity_kernel()


def _run_adsn(cfg: ExperimentConfig, out: Path) -> dict:
    sched = cfg.schedule
    obs_seed, sample_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    model = texton_from_image(read_png(cfg.image))
    summary = {"image_shape": list(model.shape)}
    if cfg.kind == "adsn-generate":
        rng = np.random.default_rng(obs_seed)
        write_png(out / "x0.png", adsn_sample(model, rng))
        curves, final = deblur_wasserstein_curves(model, None, 1.0, None, sched, [None], keep_final=True)
        prob = spectral_problem(model, None, 1.0)
        rng = np.random.default_rng(sample_seed)
        if cfg.samples:
            ys = ddpm_generate(model, sched, rng, cfg.samples)
            for k, y in enumerate(ys):
                write_png(out / f"ddpm_sample_{k}.png", y)
    else:
        kernel = _kernel(cfg)
        x0, v = make_observation(model, kernel, cfg.sigma, np.random.default_rng(obs_seed))
        write_png(out / "x0.png", x0)
        write_png(out / "v.png", v)
        curves, final = deblur_wasserstein_curves(model, kernel, cfg.sigma, v, sched, cfg.models,
                                                  keep_final=True)
        prob = spectral_problem(model, kernel, cfg.sigma, v)
        summary["kernel"] = {"shape": list(kernel.weights.shape), "center": list(kernel.center),
                             "sum": kernel.total}
        for m in cfg.models:
            if cfg.samples:
                # every model sees the same noise stream
                ys = simulate_spectral(prob, m, sched, np.random.default_rng(sample_seed), cfg.samples)
                for k, y in enumerate(ys):
                    write_png(out / f"{_slug(m.label)}_sample_{k}.png", y)
    for label, (state, _) in final.items():
        write_png(out / f"{_slug(label)}_mean.png", prob.mean_image(state.mean_coords))
    write_curves(out / "curves.csv", curves.values())
    summary["models"] = {c.model: _curve_summary(c) for c in curves.values()}
    summary["diagnostics"] = {"max_eigenbasis_leakage": {k: leak for k, (_, leak) in final.items()}}
    return summary


def execute(cfg: ExperimentConfig) -> dict:
    """Run one experiment and write its outputs; returns the summary that was saved.

    Raises :class:`NumericalInstabilityError` (nothing partial is reported as
    success) and ``OSError`` on write failures.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    body = _run_toy(cfg, out) if cfg.is_toy else _run_adsn(cfg, out)
    summary = {
        "experiment": cfg.kind,
        "seed": cfg.seed,
        "config": cfg.raw,
        "versions": {"gaussdiff": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        **body,
    }
    text = json.dumps(_jsonable(summary), indent=2, sort_keys=True, allow_nan=False)
    (out / "summary.json").write_text(text + "\n")
    return summary


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run and map failures to exit codes (2 config, 3 instability, 4 I/O)."""
    try:
        execute(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalInstabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK
