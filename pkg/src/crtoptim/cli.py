"""Command-line front end.

``crtoptim optimize`` reads a JSON run configuration, dispatches one of
the optimisers, and writes a result bundle: a design grid CSV (rows are
clusters or sequences, columns are periods, each cell ``treated:count``),
a weights CSV for the weighting algorithms, and a JSON summary carrying
the criterion value, seed, wall time, and a digest of the canonicalised
configuration. ``crtoptim evaluate`` scores an explicit design against a
configuration and cross-checks the closed form where it applies.

Exit codes: 2 for configuration problems, 3 for optimiser infeasibility.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from .apportion import best_rounding
from .covariance import CovarianceSpec, ModelSpec
from .designspace import Cell, Design, DesignSpace, ExperimentalUnit, standard_space
from .errors import (ConvergenceError, EnumerationLimitError, InfeasibleError,
                     NumericDomainError, ValidationError)
from .exact import CellMeanParams, optimal_switch_ordering, treatment_precision
from .glscore import DesignCriterion
from .robust import ModelClass, ModelEntry, RobustCriterion
from .search import local_search, reverse_greedy
from .weights import mixed_model_weights, simplex_weight_descent

ALGORITHMS = ("local", "reverse-greedy", "mixed-model-weights",
              "simplex-weights", "closed-form")


class ConfigError(Exception):
    """Configuration rejected; message names the offending field."""


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _require(cfg: dict, field: str, kind, where: str):
    if field not in cfg:
        raise ConfigError(f"missing field '{where}{field}'")
    value = cfg[field]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"field '{where}{field}' must be a number")
        return float(value)
    if kind is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"field '{where}{field}' must be an integer")
        return value
    if not isinstance(value, kind):
        raise ConfigError(f"field '{where}{field}' has the wrong type")
    return value


def load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config is not valid JSON at line {exc.lineno} column {exc.colno}: "
            f"{exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def parse_space(cfg: dict) -> DesignSpace:
    spec = _require(cfg, "space", dict, "")
    try:
        if "standard" in spec:
            std = spec["standard"]
            return standard_space(
                _require(std, "T", int, "space.standard."),
                style=std.get("style", "no-reversibility"),
                max_replication=std.get("maxReplication", 1),
                cells_per_period=std.get("count", 1),
                granularity=std.get("granularity", "sequence"))
        n_periods = _require(spec, "T", int, "space.")
        unit_specs = _require(spec, "units", list, "space.")
        units = []
        for i, u in enumerate(unit_specs):
            cells = _require(u, "cells", list, f"space.units[{i}].")
            parsed = []
            for k, cell in enumerate(cells):
                where = f"space.units[{i}].cells[{k}]."
                parsed.append(Cell(_require(cell, "period", int, where),
                                   _require(cell, "treated", int, where),
                                   cell.get("count", 1)))
            units.append(ExperimentalUnit(u.get("clusterId", i), tuple(parsed)))
        return DesignSpace(n_periods, tuple(units),
                           max_replication=spec.get("maxReplication", 1),
                           granularity=spec.get("granularity", "sequence"))
    except ValidationError as exc:
        raise ConfigError(f"invalid field 'space': {exc}") from exc


def parse_covariance(cfg: dict, key: str = "covariance") -> CovarianceSpec:
    spec = _require(cfg, key, dict, "")
    kind = _require(spec, "kind", str, f"{key}.")
    try:
        if "icc" in spec:
            return CovarianceSpec.from_icc(
                kind, _require(spec, "icc", float, f"{key}."),
                cac=spec.get("cac"), decay=spec.get("decay", 1.0),
                sigma2=spec.get("sigma2", 1.0))
        return CovarianceSpec(kind, tau2=_require(spec, "tau2", float, f"{key}."),
                              omega2=spec.get("omega2", 0.0),
                              decay=spec.get("decay", 1.0),
                              sigma2=spec.get("sigma2", 1.0))
    except ValidationError as exc:
        raise ConfigError(f"invalid field '{key}': {exc}") from exc


def parse_model(cfg: dict, key: str = "model") -> ModelSpec:
    if key not in cfg:
        return ModelSpec()
    spec = cfg[key]
    if not isinstance(spec, dict):
        raise ConfigError(f"field '{key}' must be an object")
    try:
        return ModelSpec(family=spec.get("family", "gaussian-identity"),
                         beta=spec.get("beta"),
                         attenuate=spec.get("attenuate", False))
    except ValidationError as exc:
        raise ConfigError(f"invalid field '{key}': {exc}") from exc


def parse_robust(cfg: dict, space: DesignSpace) -> RobustCriterion | None:
    if "robust" not in cfg:
        return None
    spec = cfg["robust"]
    if not isinstance(spec, dict):
        raise ConfigError("field 'robust' must be an object")
    entries_cfg = _require(spec, "entries", list, "robust.")
    entries = []
    for i, entry in enumerate(entries_cfg):
        where = f"robust.entries[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"field '{where}' must be an object")
        cov = parse_covariance(entry, "covariance")
        model = parse_model(entry, "model")
        prior = _require(entry, "prior", float, f"{where}.")
        entries.append(ModelEntry(covariance=cov, prior=prior, model=model))
    try:
        model_class = ModelClass(tuple(entries),
                                 form=spec.get("form", "linear-average"))
        return RobustCriterion(space, model_class)
    except ValidationError as exc:
        raise ConfigError(f"invalid field 'robust': {exc}") from exc


def config_digest(cfg: dict) -> str:
    semantic = {k: v for k, v in cfg.items() if k != "out"}
    canonical = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _design_grid_rows(space: DesignSpace, design: Design) -> list[list[str]]:
    """One row per realised cluster; cells formatted ``treated:count``."""
    rows = []
    if space.granularity == "sequence":
        cluster = 0
        for j, mult in enumerate(design.counts):
            for _ in range(mult):
                row = [""] * space.n_periods
                for cell in space.units[j].cells:
                    row[cell.period - 1] = f"{cell.treated}:{cell.count}"
                rows.append([f"cluster_{cluster}", f"seq_{j}"] + row)
                cluster += 1
    else:
        by_cluster: dict[int, dict[int, tuple[int, int]]] = {}
        for j, mult in enumerate(design.counts):
            if mult == 0:
                continue
            unit = space.units[j]
            for cell in unit.cells:
                slot = by_cluster.setdefault(unit.cluster_id, {})
                slot[cell.period] = (cell.treated, mult * cell.count)
        for cid in sorted(by_cluster):
            row = [""] * space.n_periods
            for period, (treated, count) in by_cluster[cid].items():
                row[period - 1] = f"{treated}:{count}"
            rows.append([f"cluster_{cid}", f"cluster_{cid}"] + row)
    return rows


def write_design_grid(path, space: DesignSpace, design: Design) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cluster", "source"] +
                        [f"period_{t}" for t in range(1, space.n_periods + 1)])
        writer.writerows(_design_grid_rows(space, design))


def write_weights_csv(path, space: DesignSpace, weights: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if space.granularity == "sequence":
            writer.writerow(["unit", "weight"])
            for j, w in enumerate(weights):
                writer.writerow([f"seq_{j}", repr(float(w))])
        else:
            writer.writerow(["cluster", "period", "weight"])
            for j, w in enumerate(weights):
                unit = space.units[j]
                writer.writerow([unit.cluster_id, unit.cells[0].period,
                                 repr(float(w))])


def _summary(out_dir: Path, cfg: dict, algorithm: str, value: float,
             seed, started: float, extra: dict | None = None) -> None:
    payload = {
        "algorithm": algorithm,
        "criterion_value": None if math.isinf(value) else value,
        "seed": seed,
        "config_digest": config_digest(cfg),
    }
    if extra:
        payload.update(extra)
    payload["wall_time_s"] = round(time.perf_counter() - started, 6)
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _run_single(cfg: dict, space, cov, model, robust, algorithm, m, restarts,
                seed, workers, out_dir: Path) -> float:
    started = time.perf_counter()
    out_dir.mkdir(parents=True, exist_ok=True)
    criterion = robust if robust is not None else DesignCriterion(
        space, cov, model=model)
    extra: dict = {}

    if algorithm in ("local", "reverse-greedy"):
        if m is None:
            raise ConfigError("missing field 'm'")
        if algorithm == "local":
            result = local_search(space, criterion, m, restarts=restarts,
                                  seed=seed, workers=workers)
            extra["restarts"] = restarts
        else:
            result = reverse_greedy(space, criterion, m)
        write_design_grid(out_dir / "design_grid.csv", space, result.design)
        extra["design_counts"] = list(result.design.counts)
        _summary(out_dir, cfg, algorithm, result.value, seed, started, extra)
        return result.value

    if algorithm == "mixed-model-weights":
        n_obs = cfg.get("n_obs")
        wd = mixed_model_weights(space, cov, model=model, total_obs=n_obs,
                                 tolerance=cfg.get("tolerance", 1e-6))
        write_weights_csv(out_dir / "weights.csv", space, wd.weights)
        extra["iterations"] = wd.iterations
        value = wd.value
        if m is not None or (space.granularity != "sequence" and n_obs):
            budget = m if space.granularity == "sequence" else int(n_obs)
            rounded = best_rounding(space, cov, wd.weights, budget, model=model)
            write_design_grid(out_dir / "design_grid.csv", space, rounded.design)
            extra["rounding_scheme"] = rounded.scheme
            extra["design_counts"] = list(rounded.design.counts)
            value = rounded.value
        _summary(out_dir, cfg, algorithm, value, seed, started, extra)
        return value

    if algorithm == "simplex-weights":
        wd = simplex_weight_descent(space, cov, model=model,
                                    tolerance=cfg.get("tolerance", 1e-8))
        write_weights_csv(out_dir / "weights.csv", space, wd.weights)
        extra["iterations"] = wd.iterations
        value = wd.value
        if m is not None:
            rounded = best_rounding(space, cov, wd.weights, m, model=model)
            write_design_grid(out_dir / "design_grid.csv", space, rounded.design)
            extra["rounding_scheme"] = rounded.scheme
            extra["design_counts"] = list(rounded.design.counts)
            value = rounded.value
        _summary(out_dir, cfg, algorithm, value, seed, started, extra)
        return value

    # closed-form: scan treated-cell budgets of the switch ordering
    if cov.kind != "EXC2":
        raise ConfigError("field 'algorithm': closed-form needs an EXC2 covariance")
    if m is None:
        raise ConfigError("missing field 'm'")
    counts = {c.count for u in space.units for c in u.cells}
    if space.granularity != "sequence" or len(counts) != 1:
        raise ConfigError(
            "field 'algorithm': closed-form needs a sequence space with "
            "equal cell counts")
    params = CellMeanParams(m, space.n_periods, counts.pop(), cov.tau2,
                            cov.omega2, cov.sigma2)
    best = None
    for budget in range(m * space.n_periods + 1):
        treat = optimal_switch_ordering(m, space.n_periods,
                                        params.cluster_mean_correlation, budget)
        prec = treatment_precision(params, treat)
        if prec > 0 and (best is None or prec > best[0]):
            best = (prec, treat)
    if best is None:
        raise InfeasibleError("no budget yields a finite-variance design")
    precision, treat = best
    with open(out_dir / "design_grid.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cluster", "source"] +
                        [f"period_{t}" for t in range(1, space.n_periods + 1)])
        for k, row in enumerate(treat):
            writer.writerow([f"cluster_{k}", "closed-form"] +
                            [f"{int(v)}:{params.obs_per_cell}" for v in row])
    _summary(out_dir, cfg, algorithm, 1.0 / precision, seed, started, extra)
    return 1.0 / precision


@click.group()
def main():
    """Optimal cluster randomised trial designs."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--algorithm", type=click.Choice(ALGORITHMS), default=None)
@click.option("--m", "m_override", type=int, default=None)
@click.option("--restarts", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--out", "out_override", type=click.Path(), default=None)
def optimize(config_path, algorithm, m_override, restarts, seed, workers,
             out_override):
    """Run an optimiser described by a JSON configuration."""
    try:
        cfg = load_config(config_path)
        algorithm = algorithm or cfg.get("algorithm")
        if algorithm not in ALGORITHMS:
            raise ConfigError(
                f"field 'algorithm' must be one of {', '.join(ALGORITHMS)}")
        space = parse_space(cfg)
        model = parse_model(cfg)
        robust = parse_robust(cfg, space)
        m = m_override if m_override is not None else cfg.get("m")
        if m is not None and (not isinstance(m, int) or m < 1):
            raise ConfigError("field 'm' must be a positive integer")
        restarts = restarts if restarts is not None else cfg.get("restarts", 100)
        seed = seed if seed is not None else cfg.get("seed", 0)
        if workers is None:
            workers = int(os.environ.get("CRT_OPTIM_WORKERS",
                                         cfg.get("workers", 1)))
        out_dir = Path(out_override or cfg.get("out", "."))

        grid = cfg.get("grid")
        if robust is not None:
            if grid is not None:
                raise ConfigError("field 'grid' cannot be combined with 'robust'")
            if algorithm not in ("local", "reverse-greedy"):
                raise ConfigError(
                    "field 'robust' only applies to the combinatorial "
                    "algorithms (local, reverse-greedy)")
        if grid is not None:
            _run_grid(cfg, space, model, grid, algorithm, m, restarts, seed,
                      workers, out_dir)
        else:
            cov = parse_covariance(cfg) if robust is None else None
            value = _run_single(cfg, space, cov, model, robust, algorithm, m,
                                restarts, seed, workers, out_dir)
            label = "inf" if math.isinf(value) else f"{value:.10g}"
            click.echo(f"{algorithm}: criterion value {label}")
    except ConfigError as exc:
        _fail(2, str(exc))
    except (ValidationError, NumericDomainError) as exc:
        _fail(2, str(exc))
    except (InfeasibleError, ConvergenceError, EnumerationLimitError) as exc:
        _fail(3, str(exc))


def _run_grid(cfg, space, model, grid, algorithm, m, restarts, seed, workers,
              out_dir: Path):
    if not isinstance(grid, dict):
        raise ConfigError("field 'grid' must be an object")
    kind = _require(grid, "kind", str, "grid.")
    iccs = _require(grid, "icc", list, "grid.")
    second_key = "cac" if kind == "EXC2" else "decay"
    seconds = _require(grid, second_key, list, "grid.")
    out_dir.mkdir(parents=True, exist_ok=True)
    index_rows = []
    for icc in iccs:
        for second in seconds:
            try:
                cov = (CovarianceSpec.from_icc(kind, icc, cac=second)
                       if kind == "EXC2"
                       else CovarianceSpec.from_icc(kind, icc, decay=second))
            except ValidationError as exc:
                raise ConfigError(f"invalid field 'grid': {exc}") from exc
            cell_dir = out_dir / f"icc{icc}_{second_key}{second}"
            value = _run_single(cfg, space, cov, model, None, algorithm, m,
                                restarts, seed, workers, cell_dir)
            index_rows.append([icc, second, value, str(cell_dir.name)])
            label = "inf" if math.isinf(value) else f"{value:.10g}"
            click.echo(f"icc={icc} {second_key}={second}: {label}")
    with open(out_dir / "grid_index.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["icc", second_key, "criterion_value", "directory"])
        writer.writerows(index_rows)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--design", "design_path", required=True, type=click.Path())
def evaluate(config_path, design_path):
    """Report the criterion value of an explicit design."""
    try:
        cfg = load_config(config_path)
        space = parse_space(cfg)
        cov = parse_covariance(cfg)
        model = parse_model(cfg)
        try:
            design_cfg = load_config(design_path)
        except ConfigError as exc:
            raise ConfigError(f"design file: {exc}") from exc
        if "counts" in design_cfg:
            counts = design_cfg["counts"]
            if (not isinstance(counts, list)
                    or not all(isinstance(v, int) for v in counts)):
                raise ConfigError("design field 'counts' must be a list of integers")
            design = space.design_from_counts(counts)
        elif "selection" in design_cfg:
            design = space.design_from_indices(design_cfg["selection"])
        else:
            raise ConfigError("design file needs 'counts' or 'selection'")

        criterion = DesignCriterion(space, cov, model=model)
        info = criterion.information(np.asarray(design.counts))
        value = criterion.value(np.asarray(design.counts))
        if math.isinf(value):
            click.echo("criterion value: infinite (design does not identify "
                       "the treatment effect)")
        else:
            click.echo(f"criterion value: {value:.12g}")
        eigs = np.linalg.eigvalsh(info)
        cond = eigs[-1] / eigs[0] if eigs[0] > 0 else math.inf
        click.echo(f"information matrix eigenvalues: min {eigs[0]:.6g} "
                   f"max {eigs[-1]:.6g} condition {cond:.6g}")
        _closed_form_check(space, cov, model, design, value)
    except ConfigError as exc:
        _fail(2, str(exc))
    except (ValidationError, NumericDomainError) as exc:
        _fail(2, str(exc))
    except (InfeasibleError, ConvergenceError) as exc:
        _fail(3, str(exc))


def _closed_form_check(space, cov, model, design, value):
    """Cross-check against the cluster-mean precision formula when the
    design is an equal-cell complete EXC2 layout."""
    if cov.kind != "EXC2" or not model.is_gaussian:
        return
    if space.granularity != "sequence":
        return
    counts = {c.count for u in space.units for c in u.cells}
    full = all(len(u.cells) == space.n_periods for u in space.units)
    if len(counts) != 1 or not full:
        return
    rows = []
    for j, mult in enumerate(design.counts):
        seq = [0] * space.n_periods
        for cell in space.units[j].cells:
            seq[cell.period - 1] = cell.treated
        rows.extend([seq] * mult)
    params = CellMeanParams(len(rows), space.n_periods, counts.pop(),
                            cov.tau2, cov.omega2, cov.sigma2)
    precision = treatment_precision(params, np.array(rows))
    if precision <= 0 or math.isinf(value):
        agree = precision <= 0 and math.isinf(value)
        click.echo(f"closed-form cross-check: degenerate design "
                   f"({'consistent' if agree else 'INCONSISTENT'})")
        return
    rel = abs(1.0 / value - precision) / precision
    click.echo(f"closed-form cross-check: relative discrepancy {rel:.3e}")


if __name__ == "__main__":
    main()
