"""Command-line surface: dataset generation, fitting, prediction, evaluation.

File formats
------------
- Datasets are CSV with header ``x1..xDx,y1..yDy``, one observation per row,
  floats rendered with 17 significant digits (lossless for 64-bit reals).
- Models are versioned JSON holding the hyperparameters, per-expert posterior
  parameters, the gate factor, fit metadata and a dataset fingerprint.
- Metrics files are CSV with columns ``context_id,kl,hellinger,tv``.

Exit codes: 0 success, 2 validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass

import numpy as np

from . import evalmetrics
from .errors import (ConfigError, ContextMismatch, DegenerateSamples, DimensionMismatch,
                     DomainError, FingerprintMismatch, GridMismatch, NonFiniteError,
                     NotPositiveDefinite, ParseError, SbmoeError)
from .inference import ElboRecord, ElboTrace, fit
from .mathcore import NIWParams
from .model import Dataset, FitConfig, Hyperparameters, default_hyperparameters
from .predict import (GaussianMixture, fit_nw_config, mixture_logpdf_many, mixture_sample,
                      posterior_predictive)
from .synthdata import gen_1d, gen_2d, true_conditional_samples

MODEL_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# dataset CSV
# ---------------------------------------------------------------------------

def _fmt(value: float) -> str:
    return f"{value:.17g}"


def dataset_fingerprint(data: Dataset) -> dict:
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(data.x).tobytes())
    digest.update(np.ascontiguousarray(data.y).tobytes())
    return {"rows": data.n, "dx": data.dx, "dy": data.dy, "sha256": digest.hexdigest()}


def write_dataset_csv(path, data: Dataset):
    header = [f"x{i + 1}" for i in range(data.dx)] + [f"y{i + 1}" for i in range(data.dy)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for xi, yi in zip(data.x, data.y):
            fh.write(",".join(_fmt(v) for v in (*xi, *yi)) + "\n")


def read_dataset_csv(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines:
        raise ParseError(f"{path}: empty file")
    header = lines[0].split(",")
    dx = sum(1 for h in header if h.startswith("x"))
    dy = sum(1 for h in header if h.startswith("y"))
    expected = [f"x{i + 1}" for i in range(dx)] + [f"y{i + 1}" for i in range(dy)]
    if dx == 0 or dy == 0 or header != expected:
        missing = [h for h in expected if h not in header] or ["x1", "y1"]
        raise ParseError(f"{path}:1: malformed header, expected x1..xDx,y1..yDy "
                         f"(missing column {missing[0]!r})")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != dx + dy:
            raise ParseError(f"{path}:{lineno}: expected {dx + dy} columns, got {len(parts)} "
                             f"(column {expected[min(len(parts), dx + dy - 1)]!r})")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: no data rows")
    arr = np.asarray(rows)
    return Dataset(x=arr[:, :dx], y=arr[:, dx:])


def read_inputs_csv(path, dx: int) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines:
        raise ParseError(f"{path}: empty file")
    expected = [f"x{i + 1}" for i in range(dx)]
    if lines[0].split(",") != expected:
        raise ParseError(f"{path}:1: expected header {','.join(expected)}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != dx:
            raise ParseError(f"{path}:{lineno}: expected {dx} columns, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: no input rows")
    return np.asarray(rows)


# ---------------------------------------------------------------------------
# model JSON
# ---------------------------------------------------------------------------

@dataclass
class Posterior:
    """What prediction needs from a fitted model: experts plus the gate."""

    experts: list[NIWParams]
    gate_L: np.ndarray
    gate_eta: float


def model_to_dict(hp: Hyperparameters, posterior: Posterior, fit_meta: dict,
                  fingerprint: dict) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "hyperparameters": {
            "Lambda0": hp.Lambda0.tolist(), "eta0": hp.eta0, "mu0": hp.mu0.tolist(),
            "kappa0": hp.kappa0, "Sigma0": hp.Sigma0.tolist(), "nu0": hp.nu0, "C": hp.C,
        },
        "experts": [
            {"kappa": e.kappa, "mu": e.mu.tolist(), "nu": e.nu, "Sigma": e.Sigma.tolist()}
            for e in posterior.experts
        ],
        "gate": {"L": posterior.gate_L.tolist(), "eta": posterior.gate_eta},
        "fit": fit_meta,
        "dataset_fingerprint": fingerprint,
    }


def model_from_dict(doc: dict):
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ParseError(f"unsupported model format version {doc.get('format_version')}")
    h = doc["hyperparameters"]
    hp = Hyperparameters(Lambda0=np.asarray(h["Lambda0"]), eta0=h["eta0"],
                         mu0=np.asarray(h["mu0"]), kappa0=h["kappa0"],
                         Sigma0=np.asarray(h["Sigma0"]), nu0=h["nu0"], C=h["C"])
    experts = [NIWParams(mu=np.asarray(e["mu"]), kappa=e["kappa"],
                         Sigma=np.asarray(e["Sigma"]), nu=e["nu"]) for e in doc["experts"]]
    posterior = Posterior(experts=experts, gate_L=np.asarray(doc["gate"]["L"]),
                          gate_eta=doc["gate"]["eta"])
    return hp, posterior, doc["fit"], doc["dataset_fingerprint"]


def save_model(path, hp, posterior, fit_meta, fingerprint):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(model_to_dict(hp, posterior, fit_meta, fingerprint), fh, indent=1)
        fh.write("\n")


def load_model(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return model_from_dict(doc)


def trace_meta(trace: ElboTrace) -> list[dict]:
    # wall times are excluded so reruns with the same flags hash identically
    return [{"iteration": r.iteration, "elbo": r.elbo, "gate_objective": r.gate_objective}
            for r in trace.records]


# ---------------------------------------------------------------------------
# evaluation pipeline (shared by the CLI, the tests and the scripts)
# ---------------------------------------------------------------------------

def draw_contexts(which: str, count: int, seed: int):
    """Held-out inputs from the generator, with the latent rows for ``twod``."""
    if which == "oned":
        held_out = gen_1d(count, seed)
        return held_out.x, held_out.x
    held_out, eta = gen_2d(count, seed)
    return held_out.x, eta


def evaluate_contexts(which: str, data: Dataset, posterior: Posterior,
                      x_stars: np.ndarray, contexts: np.ndarray, seed: int,
                      grid_size: int, truth_samples: int = 100000,
                      ke: int = 64, kg: int = 64, predictions=None):
    """Per-context KL / Hellinger / TV of the predictive against a KDE truth.

    The grid box per context covers the true-conditional samples pooled with
    samples from the density under evaluation, extended by three KDE
    bandwidths, so neither density is badly truncated. Returns a list of
    metric dicts; ``predictions`` may supply precomputed mixtures (used to
    score a baseline on the identical protocol).
    """
    root = np.random.SeedSequence(seed)
    per_context = root.spawn(x_stars.shape[0])
    results = []
    for i, (x_star, ctx) in enumerate(zip(x_stars, contexts)):
        ss_truth, ss_pred, ss_pool = per_context[i].spawn(3)
        truth = true_conditional_samples(which, ctx, truth_samples,
                                         seed=ss_truth.entropy % (2 ** 63))
        if predictions is None:
            mix = posterior_predictive(x_star, data, posterior, ke, kg,
                                       np.random.default_rng(ss_pred))
        else:
            mix = predictions[i]
        pool = mixture_sample(mix, np.random.default_rng(ss_pool), size=4096)
        axes = evalmetrics.kde_axes(truth, grid_size, lo=pool.min(axis=0),
                                    hi=pool.max(axis=0))
        truth_grid = evalmetrics.gaussian_kde(truth, axes)
        model_values = np.exp(mixture_logpdf_many(mix, truth_grid.points()))
        model_grid = evalmetrics.DensityGrid(axes=axes,
                                             values=model_values.reshape(truth_grid.values.shape))
        results.append({
            "context_id": i,
            "kl": evalmetrics.kl(truth_grid, model_grid),
            "hellinger": evalmetrics.hellinger(truth_grid, model_grid),
            "tv": evalmetrics.total_variation(truth_grid, model_grid),
        })
    return results


def gaussian_mixture_from_nw(mean: np.ndarray, variance: float) -> GaussianMixture:
    """Single-component mixture wrapping the kernel-regression predictive."""
    dy = mean.shape[0]
    return GaussianMixture(weights=np.array([1.0]), means=mean[None, :],
                           covariances=(variance * np.eye(dy))[None, :, :])


def write_metrics_csv(path, results):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("context_id,kl,hellinger,tv\n")
        for row in results:
            fh.write(f"{row['context_id']},{_fmt(row['kl'])},{_fmt(row['hellinger'])},"
                     f"{_fmt(row['tv'])}\n")
        means = {k: float(np.mean([r[k] for r in results])) for k in ("kl", "hellinger", "tv")}
        fh.write(f"mean,{_fmt(means['kl'])},{_fmt(means['hellinger'])},{_fmt(means['tv'])}\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _cmd_generate(args) -> int:
    if args.which == "oned":
        data = gen_1d(args.n, args.seed)
        eta = None
    else:
        data, eta = gen_2d(args.n, args.seed)
    write_dataset_csv(args.out, data)
    if eta is not None:
        sidecar = _context_sidecar_path(args.out)
        with open(sidecar, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("eta1,eta2\n")
            for row in eta:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        print(f"wrote {args.out} and context sidecar {sidecar}")
    else:
        print(f"wrote {args.out}")
    return 0


def _context_sidecar_path(out):
    from pathlib import Path

    p = Path(out)
    return p.with_name(p.stem + "_context" + (p.suffix or ".csv"))


def _load_fit_config(args) -> FitConfig:
    config = FitConfig(seed=0)
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
        for key, value in doc.items():
            if not hasattr(config, key):
                raise ConfigError(f"unknown config field {key!r}")
            setattr(config, key, type(getattr(config, key))(value))
    # flags override config-file values
    if args.iterations is not None:
        config.iterations = args.iterations
    if args.seed is not None:
        config.seed = args.seed
    if args.gate_mode is not None:
        config.gate_mode = args.gate_mode
    config.validate()
    return config


def _cmd_fit(args) -> int:
    data = read_dataset_csv(args.data)
    config = _load_fit_config(args)
    hp = default_hyperparameters(data, args.experts)
    state, trace = fit(data, hp, config)
    for rec in trace.records:
        print(f"iteration {rec.iteration} elbo {rec.elbo:.6f} "
              f"gate_objective {rec.gate_objective:.6f}")
    posterior = Posterior(experts=state.experts, gate_L=state.gate_L, gate_eta=state.gate_eta)
    meta = {"seed": config.seed, "iterations": config.iterations,
            "gate_mode": config.gate_mode, "elbo_trace": trace_meta(trace)}
    save_model(args.out, hp, posterior, meta, dataset_fingerprint(data))
    print(f"wrote {args.out}")
    return 0


def _check_fingerprint(fingerprint: dict, data: Dataset):
    if fingerprint != dataset_fingerprint(data):
        raise FingerprintMismatch(
            "model was fitted on a different dataset; prediction is similarity-based and "
            "needs the original training pairs")


def _cmd_predict(args) -> int:
    hp, posterior, _, fingerprint = load_model(args.model)
    data = read_dataset_csv(args.data)
    _check_fingerprint(fingerprint, data)
    inputs = read_inputs_csv(args.inputs, data.dx)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    mixtures = []
    for row in inputs:
        mix = posterior_predictive(row, data, posterior, args.ke, args.kg, rng)
        mixtures.append({"weights": mix.weights.tolist(), "means": mix.means.tolist(),
                         "covariances": mix.covariances.tolist()})
    doc = {"ke": args.ke, "kg": args.kg, "seed": args.seed,
           "inputs": inputs.tolist(), "mixtures": mixtures}
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    print(f"wrote {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    hp, posterior, _, fingerprint = load_model(args.model)
    data = read_dataset_csv(args.data)
    _check_fingerprint(fingerprint, data)
    root = np.random.SeedSequence(args.seed)
    ss_ctx, ss_eval = root.spawn(2)
    x_stars, contexts = draw_contexts(args.which, args.contexts, ss_ctx.entropy % (2 ** 63))
    if x_stars.shape[1] != data.dx:
        raise DimensionMismatch("benchmark inputs do not match the training data dimension")
    results = evaluate_contexts(args.which, data, posterior, x_stars, contexts,
                                seed=ss_eval.entropy % (2 ** 63), grid_size=args.grid,
                                truth_samples=args.truth_samples, ke=args.ke, kg=args.kg)
    write_metrics_csv(args.out, results)
    sidecar = _context_sidecar_path(args.out)
    with open(sidecar, "w", encoding="utf-8", newline="\n") as fh:
        names = [f"x{i + 1}" for i in range(x_stars.shape[1])]
        if args.which == "twod":
            names += ["eta1", "eta2"]
            rows = np.hstack([x_stars, contexts])
        else:
            rows = x_stars
        fh.write(",".join(names) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    for row in results:
        print(f"context {row['context_id']} kl {row['kl']:.6f} "
              f"hellinger {row['hellinger']:.6f} tv {row['tv']:.6f}")
    print(f"wrote {args.out} and contexts sidecar {sidecar}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sbmoe",
                                     description="similarity-based mixture-of-experts "
                                                 "regression")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic benchmark dataset as CSV")
    p.add_argument("--which", choices=["oned", "twod"], required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("fit", help="fit the model to a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--experts", type=int, required=True)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--gate-mode", choices=["stochastic", "closed_projected"], default=None)
    p.add_argument("--config", default=None, help="optional JSON file of fit settings")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("predict", help="posterior predictive mixtures for new inputs")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="the original training CSV")
    p.add_argument("--inputs", required=True, help="CSV of inputs with header x1..xDx")
    p.add_argument("--ke", type=int, default=64)
    p.add_argument("--kg", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score a fitted model against the true "
                                        "conditionals of a benchmark")
    p.add_argument("--which", choices=["oned", "twod"], required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--contexts", type=int, default=6)
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--truth-samples", type=int, default=100000)
    p.add_argument("--ke", type=int, default=64)
    p.add_argument("--kg", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) == "evaluate" and args.grid is None:
        args.grid = 512 if args.which == "oned" else 128
    try:
        return args.func(args)
    except (ParseError, ConfigError, FingerprintMismatch, DomainError, DimensionMismatch,
            ContextMismatch, GridMismatch, DegenerateSamples) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NonFiniteError, NotPositiveDefinite) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    except SbmoeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
