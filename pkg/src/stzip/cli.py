"""Command-line entry point: ``stzip simulate | fit | predict | validate``.

Exit codes: 0 success, 2 input/config error, 3 numerical failure. Errors go
to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .core import ModelKind, PriorConfig, SamplerPlan, SurveyDataset
from .diagnostics import block_ess
from .errors import ConfigurationError, InputError, NumericalError, SamplerError
from .io import (
    atomic_write,
    canonical_json,
    file_sha256,
    load_draws_npz,
    load_json,
    observations_csv,
    prior_from_dict,
    prior_to_dict,
    read_observations,
    surface_csv,
    write_draws,
)
from .kernels import KnotSet, select_knots
from .predict import (
    PredictionGrid,
    point_predict_holdout,
    posterior_predictive_loss,
    predict_surfaces,
    validation_errors,
)
from .sampler import PosteriorDraws, chain_seeds, run_chain
from .simgen import SimScenario, simulate
from .splines import SplineSpec, assemble_design

log = logging.getLogger("stzip")

EXIT_INPUT = 2
EXIT_NUMERIC = 3


# ----- design handling ----------------------------------------------------------


def expand_design(data: SurveyDataset, spline_cfg):
    """Apply an optional spline expansion of one covariate column.

    Returns ``(dataset, penalized column indices, resolved spline config)``.
    """
    if not spline_cfg:
        return data, [], None
    cfg = dict(spline_cfg)
    column = cfg.pop("column", None)
    if column not in data.covariate_names:
        raise ConfigurationError(f"spline column {column!r} not among covariates {data.covariate_names}")
    j = data.covariate_names.index(column)
    spec = SplineSpec(
        q=cfg.get("q", 2), K=cfg.get("K", 9), knots=cfg.get("knots"),
        input_range=tuple(cfg["input_range"]) if cfg.get("input_range") else None,
    )
    # the spline basis carries its own constant column
    keep = [k for k in range(data.p) if k != j and not np.all(data.X[:, k] == 1.0)]
    design = assemble_design(spec, data.X[:, j], data.X[:, keep])
    names = [data.covariate_names[k] for k in keep]
    names += [f"{column}^{d}" for d in range(spec.q + 1)]
    names += [f"{column}_knot{l + 1}" for l in range(spec.K)]
    out = SurveyDataset(data.period, data.locs, data.y, design.X, T=data.T, covariate_names=names)
    resolved = dict(design.spec.to_dict(), column=column)
    return out, [int(i) for i in design.penalized], resolved


# ----- commands --------------------------------------------------------------------


def cmd_simulate(args):
    doc = load_json(args.config) if args.config else {}
    if args.seed is not None:
        doc["seed"] = args.seed
    scenario = SimScenario.from_dict(doc)
    data, truth = simulate(scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "data.csv", observations_csv(data))
    atomic_write(out / "truth.json", truth.to_json())
    if args.split_last:
        last = data.period == data.T
        atomic_write(out / "train.csv", observations_csv(data.subset(~last, T=data.T - 1)))
        atomic_write(out / "test.csv", observations_csv(data.subset(last)))
    log.info("wrote %d observations to %s", data.n, out)
    return 0


def _resolve_prior(args) -> PriorConfig:
    doc = load_json(args.config) if args.config else {}
    mcmc = dict(doc.get("mcmc") or {})
    for flag, key in (("seed", "seed"), ("iters", "iterations"), ("burnin", "burn_in"), ("thin", "thin")):
        val = getattr(args, flag)
        if val is not None:
            mcmc[key] = val
    if args.model is not None:
        mcmc["model_kind"] = args.model
    doc["mcmc"] = mcmc
    if args.delta is not None:
        doc["delta"] = args.delta
    if args.bandwidth_grid is not None:
        doc["bandwidth_grid"] = [float(x) for x in args.bandwidth_grid.split(",")]
        doc.pop("bandwidth_weights", None)
    if args.knots is not None and args.knots.isdigit():
        doc["M"] = int(args.knots)
    return prior_from_dict(doc)


def _chain_task(payload):
    data, prior, plan, knots, pen = payload
    return run_chain(data, prior, plan, knots=knots, penalized_beta=pen, penalized_gamma=pen)


def chain_plan(plan: SamplerPlan, index: int, n_chains: int) -> SamplerPlan:
    seed = plan.seed
    if n_chains > 1:
        seed = int(np.random.SeedSequence([plan.seed, index]).generate_state(1)[0])
    return SamplerPlan(plan.model_kind, plan.iterations, plan.burn_in, plan.thin, seed, plan.store_fitted)


def cmd_fit(args):
    t0 = time.time()
    prior = _resolve_prior(args)
    raw = read_observations(args.data)
    data, pen, spline_cfg = expand_design(raw, prior.spline)
    prior.spline = spline_cfg
    plan = prior.mcmc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    knots = None
    if plan.model_kind is not ModelKind.ZIP:
        if args.knots is not None and not args.knots.isdigit():
            knots = KnotSet.from_csv(args.knots)
            prior.M = knots.M
        else:
            knot_seed, _ = chain_seeds(plan.seed)
            knots = select_knots(data.locs, prior.M, seed=knot_seed)
        knots.to_csv(out / "knots.csv")

    config_doc = prior_to_dict(prior)
    atomic_write(out / "config.json", canonical_json(config_doc))
    atomic_write(out / "data.csv", observations_csv(raw))

    n_chains = max(1, args.chains)
    payloads = [(data, prior, chain_plan(plan, i, n_chains), knots, pen) for i in range(n_chains)]
    if n_chains == 1:
        results = [_chain_task(payloads[0])]
    else:
        with ProcessPoolExecutor(max_workers=n_chains) as pool:
            results = list(pool.map(_chain_task, payloads))

    if n_chains == 1:
        write_draws(results[0], out)
        merged = results[0]
    else:
        for i, draws in enumerate(results):
            write_draws(draws, out, suffix=f"_chain{i}")
        merged = PosteriorDraws.concatenate(results)
        write_draws(merged, out)

    manifest = {
        "config_hash": file_sha256(out / "config.json"),
        "data_hash": file_sha256(args.data),
        "seed": plan.seed,
        "model_kind": plan.model_kind.value,
        "software_version": __version__,
        "chains": n_chains,
        "draws": merged.n_draws,
        "wall_clock_seconds": round(time.time() - t0, 3),
        "diagnostics": {
            "sampler": "metropolis-within-gibbs",
            "acceptance": [r.acceptance for r in results],
            "ess": [block_ess(r.columns(include_knot_values=False)) for r in results],
        },
    }
    atomic_write(out / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
    log.info("fit finished: %d draws in %.1fs", merged.n_draws, time.time() - t0)
    return 0


def _load_fit(fit_dir):
    fit_dir = Path(fit_dir)
    if not (fit_dir / "draws.npz").exists():
        raise InputError(f"{fit_dir}: no draws.npz; is this a fit directory?")
    draws = load_draws_npz(fit_dir / "draws.npz")
    config = load_json(fit_dir / "config.json")
    return draws, config


def _design_for(raw: SurveyDataset, config: dict) -> SurveyDataset:
    data, _, _ = expand_design(raw, config.get("spline"))
    return data


def _read_grid(path):
    """Grid CSV: ``t,loc_x,loc_y,x1,...,xp`` (no count column)."""
    import csv

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["t", "loc_x", "loc_y"]:
            raise InputError(f"{path}: header must start with t,loc_x,loc_y")
        names = [h.strip() for h in header[3:]]
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    try:
        arr = np.array([[float(c) for c in r] for r in rows]).reshape(-1, len(header))
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    return arr[:, 0].astype(int), arr[:, 1:3], arr[:, 3:], names


def cmd_predict(args):
    draws, config = _load_fit(args.fit_dir)
    if args.grid:
        periods, locs, Xraw, names = _read_grid(args.grid)
    else:
        if not args.lattice:
            raise InputError("give either --grid or --lattice")
        parts = [float(x) for x in args.lattice.split(",")]
        if len(parts) != 5:
            raise InputError("--lattice expects xmin,xmax,ymin,ymax,resolution")
        cov = [float(x) for x in (args.covariates or "").split(",") if x.strip()]
        lattice = PredictionGrid.lattice(parts[:4], parts[4], args.period, cov)
        periods, locs, Xraw = lattice.periods, lattice.locs, lattice.X
        names = [f"x{j + 1}" for j in range(Xraw.shape[1])]
    raw_names = load_json_names(args.fit_dir)
    if len(names) == len(raw_names):
        names = raw_names
    if locs.shape[0] == 0:
        X = np.empty((0, len(draws.covariate_names)))
    else:
        raw = SurveyDataset(periods, locs, np.zeros(len(periods), int), Xraw,
                            T=max(int(periods.max()), 1), covariate_names=names)
        X = _design_for(raw, config).X
    grid = PredictionGrid(locs, periods, X)
    rng = np.random.default_rng(args.seed)
    pred = predict_surfaces(draws, grid, sample_future_walk=args.sample_future_walk, rng=rng)
    atomic_write(args.out, surface_csv(grid, pred))
    return 0


def load_json_names(fit_dir):
    with open(Path(fit_dir) / "data.csv") as fh:
        return [h.strip() for h in fh.readline().strip().split(",")[4:]]


def cmd_validate(args):
    draws, config = _load_fit(args.fit_dir)
    train = _design_for(read_observations(Path(args.fit_dir) / "data.csv"), config)
    test_raw = read_observations(args.test_data)
    test = _design_for(test_raw, config)
    rng = np.random.default_rng(args.seed)
    lam = point_predict_holdout(
        draws, test, plug_in=args.plug_in, sample_future_walk=args.sample_future_walk, rng=rng
    )
    score = validation_errors(lam, test.y)
    score.ppl = posterior_predictive_loss(draws, train, rng).ppl if draws.n_draws >= 2 else float("nan")
    doc = score.to_dict()
    doc["model_kind"] = draws.model_kind.value
    atomic_write(args.out, json.dumps(doc, indent=1, sort_keys=True))
    return 0


# ----- argument parsing ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stzip", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic dataset and its truth")
    s.add_argument("--config", help="scenario JSON")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--split-last", action="store_true", help="also write train.csv/test.csv")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="run the Gibbs sampler")
    f.add_argument("data")
    f.add_argument("--config")
    f.add_argument("--out", required=True)
    f.add_argument("--model", choices=[k.value for k in ModelKind])
    f.add_argument("--seed", type=int)
    f.add_argument("--iters", type=int)
    f.add_argument("--burnin", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--knots", help="knot count M or a knot CSV (knot_x,knot_y)")
    f.add_argument("--delta", type=float)
    f.add_argument("--bandwidth-grid", help="comma-separated bandwidth candidates")
    f.add_argument("--chains", type=int, default=1)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("predict", help="posterior surfaces on a grid")
    r.add_argument("fit_dir")
    r.add_argument("--grid", help="CSV t,loc_x,loc_y,x1,...,xp")
    r.add_argument("--lattice", help="xmin,xmax,ymin,ymax,resolution")
    r.add_argument("--period", type=int, default=1)
    r.add_argument("--covariates", help="covariate row shared by lattice nodes")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--sample-future-walk", action="store_true")
    r.set_defaults(func=cmd_predict)

    v = sub.add_parser("validate", help="hold-out errors and PPL")
    v.add_argument("fit_dir")
    v.add_argument("test_data")
    v.add_argument("--out", required=True)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--plug-in", action="store_true")
    v.add_argument("--sample-future-walk", action="store_true")
    v.set_defaults(func=cmd_validate)
    return p


def _fail(code, exc, **extra):
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    doc.update(extra)
    sys.stderr.write(json.dumps(doc) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except SamplerError as exc:
        return _fail(EXIT_NUMERIC, exc, block=exc.block, iteration=exc.iteration)
    except NumericalError as exc:
        return _fail(EXIT_NUMERIC, exc)
    except (InputError, ConfigurationError, FileNotFoundError, IsADirectoryError) as exc:
        return _fail(EXIT_INPUT, exc)


if __name__ == "__main__":
    sys.exit(main())
