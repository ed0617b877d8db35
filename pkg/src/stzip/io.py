"""File formats: observation CSV, config JSON, draw files and prediction CSV."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .core import ModelKind, PriorConfig, SamplerPlan, SurveyDataset
from .errors import ConfigurationError, InputError
from .kernels import KnotSet
from .sampler import PosteriorDraws

OBS_FIXED = ("t", "loc_x", "loc_y", "y")
SURFACE_HEADER = ("loc_x", "loc_y", "date_index", "mean_count", "p_zero", "q025_count", "q975_count")


def fmt(x) -> str:
    return f"{float(x):.17g}"


def atomic_write(path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def read_observations(path, T=None) -> SurveyDataset:
    """Read ``t,loc_x,loc_y,y,x1,...,xp``. Errors name the offending row."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if tuple(header[:4]) != OBS_FIXED or len(header) < 5:
            raise InputError(f"{path}: header must start with t,loc_x,loc_y,y and have >= 1 covariate")
        cov_names = header[4:]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                t = int(row[0])
                y = float(row[3])
                vals = [float(c) for c in row[1:3]] + [float(c) for c in row[4:]]
            except ValueError as exc:
                raise InputError(f"{path}: row {lineno}: {exc}") from None
            if y < 0 or y != int(y):
                raise InputError(f"{path}: row {lineno}: count must be a non-negative integer")
            if t < 1:
                raise InputError(f"{path}: row {lineno}: period must be >= 1")
            if not np.all(np.isfinite(vals)):
                raise InputError(f"{path}: row {lineno}: non-finite location or covariate")
            rows.append((t, vals[0], vals[1], int(y), vals[2:]))
    if not rows:
        raise InputError(f"{path}: no observations")
    return SurveyDataset(
        period=[r[0] for r in rows],
        locs=[(r[1], r[2]) for r in rows],
        y=[r[3] for r in rows],
        X=[r[4] for r in rows],
        T=T,
        covariate_names=cov_names,
    )


def observations_csv(data: SurveyDataset) -> str:
    lines = [",".join(OBS_FIXED + tuple(data.covariate_names))]
    for i in range(data.n):
        cells = [str(int(data.period[i])), fmt(data.locs[i, 0]), fmt(data.locs[i, 1]), str(int(data.y[i]))]
        cells += [fmt(x) for x in data.X[i]]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_observations(data: SurveyDataset, path):
    atomic_write(path, observations_csv(data))


_PRIOR_FIELDS = {
    "D_beta", "D_gamma", "d_tau_u", "d_tau_xi", "d_sigma_v", "d_sigma_eta", "d_tau_P",
    "delta", "bandwidth_grid", "bandwidth_weights", "M", "bandwidth_update", "joint_blocks", "bandwidth_move_every", "mcmc", "spline",
}


def prior_from_dict(doc: dict) -> PriorConfig:
    unknown = set(doc) - _PRIOR_FIELDS
    if unknown:
        raise ConfigurationError(f"unknown config fields: {sorted(unknown)}")
    doc = dict(doc)
    mcmc = doc.pop("mcmc", None) or {}
    if not isinstance(mcmc, dict):
        raise ConfigurationError("mcmc must be an object")
    bad = set(mcmc) - set(SamplerPlan.__dataclass_fields__)
    if bad:
        raise ConfigurationError(f"unknown mcmc fields: {sorted(bad)}")
    try:
        return PriorConfig(mcmc=SamplerPlan(**mcmc), **doc)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def prior_to_dict(prior: PriorConfig) -> dict:
    def plain(x):
        if isinstance(x, np.ndarray):
            return x.tolist()
        return x

    plan = prior.mcmc
    return {
        "D_beta": plain(prior.D_beta),
        "D_gamma": plain(prior.D_gamma),
        "d_tau_u": prior.d_tau_u,
        "d_tau_xi": prior.d_tau_xi,
        "d_sigma_v": prior.d_sigma_v,
        "d_sigma_eta": prior.d_sigma_eta,
        "d_tau_P": prior.d_tau_P,
        "delta": prior.delta,
        "bandwidth_grid": plain(prior.bandwidth_grid),
        "bandwidth_weights": plain(prior.bandwidth_weights),
        "M": prior.M,
        "bandwidth_update": prior.bandwidth_update,
        "joint_blocks": prior.joint_blocks,
        "bandwidth_move_every": prior.bandwidth_move_every,
        "mcmc": {
            "model_kind": ModelKind(plan.model_kind).value,
            "iterations": plan.iterations,
            "burn_in": plan.burn_in,
            "thin": plan.thin,
            "seed": plan.seed,
            "store_fitted": plan.store_fitted,
        },
        "spline": prior.spline,
    }


def load_json(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: expected a JSON object")
    return doc


def load_prior(path) -> PriorConfig:
    return prior_from_dict(load_json(path)) if path else PriorConfig()


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=1)


def draws_csv(draws: PosteriorDraws) -> str:
    cols = draws.columns()
    names = list(cols)
    mat = np.column_stack([np.asarray(c, dtype=float) for c in cols.values()])
    lines = [",".join(names)]
    lines += [",".join(fmt(x) for x in row) for row in mat]
    return "\n".join(lines) + "\n"


def write_draws(draws: PosteriorDraws, directory, suffix=""):
    """Columnar CSV, summary JSON and an ``.npz`` dump used for prediction."""
    directory = Path(directory)
    atomic_write(directory / f"draws{suffix}.csv", draws_csv(draws))
    atomic_write(directory / f"summary{suffix}.json", canonical_json(draws.summary()))
    save_draws_npz(draws, directory / f"draws{suffix}.npz")


def save_draws_npz(draws: PosteriorDraws, path):
    arrays = {n: getattr(draws, n) for n in PosteriorDraws.ARRAY_FIELDS if getattr(draws, n) is not None}
    meta = {
        "model_kind": draws.model_kind.value,
        "covariate_names": draws.covariate_names,
        "T": draws.T,
        "delta": draws.delta,
        "penalized_beta": draws.penalized_beta,
        "penalized_gamma": draws.penalized_gamma,
    }
    arrays["bandwidth_grid"] = draws.bandwidth_grid
    if draws.knots is not None:
        arrays["knots"] = draws.knots.knots
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)


def load_draws_npz(path) -> PosteriorDraws:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        kw = {n: z[n] for n in PosteriorDraws.ARRAY_FIELDS if n in z.files}
        knots = KnotSet(z["knots"]) if "knots" in z.files else None
        grid = z["bandwidth_grid"]
    return PosteriorDraws(
        model_kind=meta["model_kind"], covariate_names=meta["covariate_names"], T=meta["T"],
        delta=meta["delta"], bandwidth_grid=grid, knots=knots,
        penalized_beta=meta["penalized_beta"], penalized_gamma=meta["penalized_gamma"], **kw,
    )


def surface_csv(grid, pred) -> str:
    q = list(pred.quantiles)
    try:
        lo, hi = q.index(0.025), q.index(0.975)
    except ValueError:
        raise ConfigurationError("surface CSV needs the 0.025 and 0.975 quantiles") from None
    lines = [",".join(SURFACE_HEADER)]
    for i in range(grid.n):
        lines.append(",".join([
            fmt(grid.locs[i, 0]), fmt(grid.locs[i, 1]), str(int(grid.periods[i])),
            fmt(pred.mean_count[i]), fmt(pred.p_zero[i]),
            fmt(pred.count_quantiles[i, lo]), fmt(pred.count_quantiles[i, hi]),
        ]))
    return "\n".join(lines) + "\n"
