"""Command-line entry point: solve, boundary, simulate, filter, smoothfit, risk-curve.

Exit codes: 0 success, 2 invalid input, 3 missing or mismatched artifact,
4 iteration budget exceeded.  Failures print a JSON object on stderr.
"""

from __future__ import annotations

import functools
import json
import platform
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import metadata
from pathlib import Path

import click
import numpy as np

from . import artifacts, errors
from . import boundary as bd
from . import simulator as sim
from .errors import DisorderError
from .filter import AtomPrior, bernoulli_prior, run_filter
from .model import ModelParams, Regime, initial_tilde, min_bayes_risk, validate
from .solver import DEFAULT_MAX_ITER, GridSpec, iterate, j_zero, residual_budget, solve, zero_grid

EXIT_OK, EXIT_INVALID, EXIT_ARTIFACT, EXIT_BUDGET = 0, 2, 3, 4
_ARTIFACT_CODES = {errors.MISSING_ARTIFACT, errors.CACHE_MISMATCH}


def exit_code_for(err: DisorderError) -> int:
    if err.code == errors.BUDGET_EXCEEDED:
        return EXIT_BUDGET
    if err.code in _ARTIFACT_CODES:
        return EXIT_ARTIFACT
    return EXIT_INVALID


@dataclass
class RunConfig:
    params: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    epsilon: float = 0.01
    seed: int = 0
    n_paths: int = 10000
    horizon: float | None = None
    output_dir: str = "."
    max_iter: int = DEFAULT_MAX_ITER

    GRID_KEYS = ("nx", "ny", "dt_quad", "window")

    @classmethod
    def from_file(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise DisorderError(errors.MISSING_ARTIFACT, f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise DisorderError(errors.INVALID_ARGUMENT, f"config file {path} is not JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise DisorderError(errors.INVALID_ARGUMENT, "config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise DisorderError(errors.UNKNOWN_KEY, f"unknown config keys {unknown}")
        grid = raw.get("grid", {})
        bad = sorted(set(grid) - set(cls.GRID_KEYS))
        if bad:
            raise DisorderError(errors.UNKNOWN_KEY, f"unknown grid keys {bad}")
        return cls(**raw)

    def model(self) -> ModelParams:
        return ModelParams.from_dict(self.params)

    def spec(self, params: ModelParams) -> GridSpec:
        g = self.grid
        return GridSpec.for_params(params, nx=g.get("nx", 101), ny=g.get("ny"), dt_quad=g.get("dt_quad"),
                                   window=g.get("window"))

    def check(self) -> None:
        if not (isinstance(self.epsilon, (int, float)) and self.epsilon > 0):
            raise DisorderError(errors.INVALID_ARGUMENT, f"epsilon={self.epsilon} must be > 0")
        if self.n_paths < 1:
            raise DisorderError(errors.INVALID_ARGUMENT, f"n_paths={self.n_paths} must be >= 1")
        if self.horizon is not None and not self.horizon > 0:
            raise DisorderError(errors.INVALID_ARGUMENT, f"horizon={self.horizon} must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "scipy", "numba", "click"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


class Run:
    """Shared state of one command: config, output folder, manifest entries."""

    def __init__(self, command: str, cfg: RunConfig, cache_root: str | None):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.cache = artifacts.cache_dir(cache_root or self.out / ".cache")
        self.outputs: dict[str, str] = {}
        self.inputs: dict[str, str] = {}
        self.start = time.perf_counter()

    def write_json(self, name: str, obj) -> Path:
        path = self.out / name
        text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default)
        path.write_text(text)
        self.outputs[name] = artifacts.sha256_bytes(text.encode())
        return path

    def record(self, name: str, digest: str) -> None:
        self.outputs[name] = digest

    def manifest(self, extra: dict | None = None) -> None:
        cfg = self.cfg.to_dict()
        body = {
            "command": self.command,
            "config": cfg,
            "config_sha256": artifacts.sha256_bytes(artifacts.canonical_json(cfg).encode()),
            "versions": _versions(),
            "seconds": time.perf_counter() - self.start,
            "inputs": self.inputs,
            "outputs": self.outputs,
        }
        if extra:
            body.update(extra)
        (self.out / f"{self.command}.manifest.json").write_text(
            json.dumps(body, indent=2, sort_keys=True, default=_json_default))


def _json_default(obj):
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Regime):
        return obj.value
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DisorderError as err:
            click.echo(json.dumps(err.to_dict()), err=True)
            sys.exit(exit_code_for(err))
    return wrapper


def common_options(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="RunConfig JSON file."),
        click.option("--lambda", "lam", type=float, help="Disorder rate."),
        click.option("--mu", type=float, help="Pre-disorder event rate."),
        click.option("--c", "cost", type=float, help="Delay cost per unit time."),
        click.option("--m", type=float, help="Mean offset of the post-disorder rate."),
        click.option("--pi", type=float, help="Prior probability of an immediate disorder."),
        click.option("--nx", type=int),
        click.option("--ny", type=int),
        click.option("--dt-quad", type=float),
        click.option("--window", type=float, help="Solve on [0, window]^2 instead of the full triangle box."),
        click.option("--epsilon", type=float),
        click.option("--max-iter", type=int),
        click.option("--seed", type=int),
        click.option("--n-paths", type=int),
        click.option("--horizon", type=float),
        click.option("--output-dir", type=click.Path(file_okay=False)),
        click.option("--workers", type=int, default=None, help="Thread count for compiled loops."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def build_config(kw: dict) -> RunConfig:
    cfg = RunConfig.from_file(kw.pop("config_path", None))
    params = dict(cfg.params)
    for flag, key in (("lam", "lambda"), ("mu", "mu"), ("cost", "c"), ("m", "m"), ("pi", "pi")):
        if kw.get(flag) is not None:
            params[key] = kw[flag]
    grid = dict(cfg.grid)
    for key in RunConfig.GRID_KEYS:
        if kw.get(key) is not None:
            grid[key] = kw[key]
    cfg = replace(cfg, params=params, grid=grid)
    for key in ("epsilon", "max_iter", "seed", "n_paths", "horizon", "output_dir"):
        if kw.get(key) is not None:
            cfg = replace(cfg, **{key: kw[key]})
    cfg.check()
    return cfg


def ensure_solved(run: Run, params: ModelParams, workers: int | None = None) -> tuple[artifacts.CachedSolve, bool]:
    spec = run.cfg.spec(params)
    key = artifacts.value_key(params, spec, run.cfg.epsilon)
    hit = artifacts.load_solve(run.cache, key, params)
    if hit is not None:
        run.inputs[f"cache:{key}"] = hit.content_hash
        return hit, True
    grid, report, prev = solve(params, spec, run.cfg.epsilon, max_iter=run.cfg.max_iter, workers=workers,
                               keep_previous=True)
    saved = artifacts.save_solve(run.cache, key, grid, prev, report)
    run.inputs[f"cache:{key}"] = saved.content_hash
    return saved, False


@click.group()
@click.option("--cache-dir", type=click.Path(file_okay=False), default=None,
              help=f"Cache folder; the {artifacts.CACHE_ENV} environment variable takes precedence.")
@click.pass_context
def main(ctx, cache_dir):
    """Quickest detection of a Poisson rate change."""
    ctx.obj = {"cache_dir": cache_dir}


@main.command("solve")
@common_options
@click.pass_context
@guarded
def solve_cmd(ctx, workers, **kw):
    """Value iteration to tolerance epsilon; writes report.json and grid.csv."""
    cfg = build_config(kw)
    run = Run("solve", cfg, ctx.obj["cache_dir"])
    params = cfg.model()
    cached, hit = ensure_solved(run, params, workers)
    grid = cached.grid
    report = {
        **cached.report.to_dict(),
        "cache_key": cached.key,
        "cache_hit": hit,
        "content_sha256": cached.content_hash,
        "residual_budget": residual_budget(grid, params, cfg.epsilon),
        "spec": grid.spec.to_dict(),
        "params": params.to_dict(),
        "xi_star": params.xi_star,
        "regime": params.regime.value,
    }
    run.write_json("report.json", report)
    run.record("grid.csv", artifacts.write_grid_csv(run.out / "grid.csv", grid))
    run.manifest({"cache_hit": hit})
    click.echo(json.dumps({"n_final": cached.report.n_final, "cache_hit": hit, "cache_key": cached.key}))


def _labels(curve: bd.BoundaryCurve, xi_e: float | None) -> list[str]:
    if xi_e is None:
        return [""] * curve.xs.size
    out = []
    for x, y in zip(curve.xs, curve.ys):
        if y <= 0 or x >= curve.xi:
            out.append("")
        elif x <= xi_e and xi_e > 0:
            out.append("X")
        else:
            out.append("E")
    return out


@main.command("boundary")
@common_options
@click.option("--method", type=click.Choice(["grid", "c", "d"]), default="grid", show_default=True)
@click.option("--split/--no-split", default=False, help="Split into entrance and exit parts.")
@click.option("--evaluator", type=click.Choice(["operator", "grid"]), default="operator", show_default=True)
@click.pass_context
@guarded
def boundary_cmd(ctx, workers, method, split, evaluator, **kw):
    """Stopping boundary as boundary.csv (x, gamma, classification) plus split.json."""
    cfg = build_config(kw)
    run = Run("boundary", cfg, ctx.obj["cache_dir"])
    params = cfg.model()
    if method == "c" and params.regime is not Regime.LARGE_LAMBDA:
        raise DisorderError(errors.WRONG_REGIME, "method c needs the large-lambda regime")
    cached, _ = ensure_solved(run, params, workers)
    grid = cached.grid
    label = {"grid": "grid", "c": "method_c", "d": "method_d"}[method]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", bd.DegenerateGridWarning)
        if method == "grid":
            # the operator evaluator applies one more step, which would hide a zero grid
            gamma = bd.extract_gamma(grid, params, evaluator="grid" if grid.is_zero else evaluator)
            xi_e = None
        elif method == "c":
            gamma = bd.large_lambda_fast_boundary(params, grid)[0]
            xi_e = None
        else:
            gamma, xi_e, _ = bd.method_d_boundary(grid, params)
    for w in caught:
        click.echo(f"warning: {w.message}", err=True)
    summary = {"xi": gamma.xi, "regime": params.regime.value, "method": label, "n_iter": grid.n_iter}
    if split:
        if xi_e is None:
            xi_e = 0.0 if grid.is_zero else bd.tangency_xi_e(bd.a_curve(grid, params), params)
        summary["xi_e"] = xi_e
    if params.regime is Regime.LARGE_LAMBDA and not grid.is_zero:
        g1 = bd.extract_gamma(iterate(zero_grid(params, grid.spec), params), params, evaluator=evaluator)
        try:
            summary["certificate"] = bd.gamma1_certificate(gamma, g1, params)
        except DisorderError as err:
            summary["certificate"] = {"error": err.code}
    meta = {"params": params.to_dict(), "method": label, "source_cache": cached.key,
            "source_sha256": cached.content_hash}
    run.record("boundary.csv", artifacts.write_boundary(run.out / "boundary.csv", gamma,
                                                         _labels(gamma, summary.get("xi_e")), meta))
    run.write_json("split.json", summary)
    run.manifest()
    click.echo(json.dumps(summary, default=_json_default))


def _theoretical_risk(run: Run, params: ModelParams) -> float | None:
    spec = run.cfg.spec(params)
    key = artifacts.value_key(params, spec, run.cfg.epsilon)
    cached = artifacts.load_solve(run.cache, key, params)
    if cached is None:
        return None
    p0 = initial_tilde(params)
    if p0.phi0 + p0.phi1 < params.xi_star and (p0.phi0 >= spec.x_max or p0.phi1 >= spec.y_max):
        return None
    return min_bayes_risk(params, j_zero(cached.grid, p0, params)[0], atol=1e-9)


@main.command("simulate")
@common_options
@click.option("--policy", type=click.Choice(["boundary", "threshold", "fixed"]), default="boundary",
              show_default=True)
@click.option("--threshold", "level", type=float, default=0.5, show_default=True)
@click.option("--fixed-time", type=float, default=0.0, show_default=True)
@click.option("--boundary-file", type=click.Path(dir_okay=False), default=None,
              help="Defaults to boundary.csv in the output folder.")
@click.option("--clamp/--no-clamp", default=True, help="Project the boundary between the two known lines.")
@click.option("--sweep", is_flag=True, help="Also evaluate posterior thresholds 0.05, 0.10, ..., 0.95.")
@click.option("--sweep-paths", type=int, default=None)
@click.option("--sandwich", is_flag=True, help="Path-by-path ordering of the boundary alarm.")
@click.option("--dynkin", is_flag=True, help="Generator identity under the reference measure.")
@click.option("--exit-bound", is_flag=True, help="Mean exit time against its upper bound.")
@click.option("--t-cap", type=float, default=1.0, show_default=True)
@click.option("--per-path", type=click.Path(dir_okay=False), default=None, help="CSV of theta, lambda_post, tau, loss.")
@click.pass_context
@guarded
def simulate_cmd(ctx, workers, policy, level, fixed_time, boundary_file, clamp, sweep, sweep_paths, sandwich, dynkin,
                 exit_bound, t_cap, per_path, **kw):
    """Monte Carlo Bayes risk of an alarm rule; writes risk.json."""
    cfg = build_config(kw)
    run = Run("simulate", cfg, ctx.obj["cache_dir"])
    params = cfg.model()
    curve = None
    if policy == "boundary" or sandwich:
        path = Path(boundary_file) if boundary_file else run.out / "boundary.csv"
        curve, meta = artifacts.read_boundary(path, params)
        run.inputs[str(path)] = meta["content_sha256"]
        if clamp:
            curve = bd.clamp_curve(curve, params)
    if policy == "boundary":
        spec = sim.PolicySpec.boundary(curve, params)
    elif policy == "threshold":
        spec = sim.PolicySpec.posterior_threshold(level)
    else:
        spec = sim.PolicySpec.fixed_time(fixed_time)
    result = sim.simulate_policy(params, spec, cfg.n_paths, cfg.horizon, cfg.seed)
    est = result.estimate()
    report = {"policy": spec.describe(), "risk": est.to_dict(), "params": params.to_dict(), "seed": cfg.seed}
    theory = _theoretical_risk(run, params)
    if theory is not None:
        report["theoretical_risk"] = theory
    if sweep:
        rows = sim.threshold_sweep(params, sweep_paths or cfg.n_paths, cfg.seed, horizon=cfg.horizon)
        report["sweep"] = [{"p": p, **r.to_dict()} for p, r in rows]
        best_p, best = min(rows, key=lambda pr: pr[1].mean)
        report["sweep_best"] = {"p": best_p, "mean": best.mean,
                                "pooled_stderr": sim.pooled_stderr(est.stderr, best.stderr)}
    if sandwich:
        report["sandwich"] = sim.sandwich_check(params, curve, cfg.n_paths, cfg.seed, cfg.horizon).to_dict()
    if dynkin:
        report["dynkin"] = sim.dynkin_check(params, cfg.n_paths, t_cap, cfg.seed).to_dict()
    if exit_bound:
        report["exit_bound"] = sim.exit_time_bound_check(params, cfg.n_paths, cfg.seed).to_dict()
    run.write_json("risk.json", report)
    if per_path:
        rows = zip(result.theta, result.lambda_post, result.tau, result.loss)
        run.record(Path(per_path).name, artifacts.write_csv(Path(per_path), ["theta", "lambda_post", "tau", "loss"],
                                                            rows))
    run.manifest()
    click.echo(json.dumps(report["risk"]))


def _float_list(text: str | None) -> list[float] | None:
    if text is None:
        return None
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise DisorderError(errors.INVALID_ARGUMENT, f"cannot parse number list {text!r}") from None


def _read_events(path: str) -> list[float]:
    p = Path(path)
    if not p.exists():
        raise DisorderError(errors.MISSING_ARTIFACT, f"event file {path} not found")
    out = []
    for line in p.read_text().splitlines():
        cell = line.split(",")[0].strip()
        if not cell or cell.startswith("#"):
            continue
        try:
            out.append(float(cell))
        except ValueError:
            if out:
                raise DisorderError(errors.INVALID_ARGUMENT, f"bad event time {cell!r}") from None
    return out


@main.command("filter")
@common_options
@click.option("--events", "events_path", type=click.Path(dir_okay=False), required=True,
              help="Event times, one per line (first CSV column).")
@click.option("--atoms", default=None, help="Comma-separated post-disorder rates; default mu-1, mu+1.")
@click.option("--weights", default=None, help="Comma-separated prior weights matching --atoms.")
@click.option("--t-end", type=float, default=None)
@click.option("--report-step", type=float, default=None)
@click.pass_context
@guarded
def filter_cmd(ctx, workers, events_path, atoms, weights, t_end, report_step, **kw):
    """Run the odds filter over an event file; writes filter.csv."""
    cfg = build_config(kw)
    run = Run("filter", cfg, ctx.obj["cache_dir"])
    params = cfg.model()
    atom_list, weight_list = _float_list(atoms), _float_list(weights)
    if atom_list is None:
        prior = bernoulli_prior(params)
    else:
        if weight_list is None:
            raise DisorderError(errors.INVALID_PRIOR, "--weights is required with --atoms")
        prior = AtomPrior(tuple(atom_list), tuple(weight_list))
    events = _read_events(events_path)
    run.inputs[events_path] = artifacts.sha256_file(events_path)
    trace = run_filter(events, params, prior, t_end, report_step)
    header = ["t"] + [f"phi{i}" for i in range(prior.k + 1)] + ["posterior", "event"]
    rows = ([t, *row, post, ev] for t, row, post, ev in zip(trace.times, trace.rows, trace.posteriors, trace.at_event))
    run.record("filter.csv", artifacts.write_csv(run.out / "filter.csv", header, rows))
    run.manifest()
    click.echo(json.dumps({"rows": len(trace.times), "final_posterior": trace.posteriors[-1]}))


@main.command("smoothfit")
@common_options
@click.option("--h-fd", type=float, default=None, help="Finite-difference step; default a quarter cell.")
@click.pass_context
@guarded
def smoothfit_cmd(ctx, workers, h_fd, **kw):
    """Derivative gaps across the boundary and entrance/exit labels; writes smoothfit.csv."""
    cfg = build_config(kw)
    run = Run("smoothfit", cfg, ctx.obj["cache_dir"])
    params = cfg.model()
    cached, _ = ensure_solved(run, params, workers)
    grid = cached.grid
    gamma = bd.extract_gamma(grid, params, evaluator="operator")
    report = bd.smooth_fit_report(grid, gamma, params, h_fd=h_fd)
    header = ["x", "gamma", "gap_phi0", "gap_phi1", "r0", "flow_enters_continuation", "classification"]
    rows = ((r.x, r.gamma, r.gap_phi0, r.gap_phi1, r.r0, r.flow_enters_continuation, r.classification)
            for r in report.records)
    run.record("smoothfit.csv", artifacts.write_csv(run.out / "smoothfit.csv", header, rows))
    xi_e = bd.tangency_xi_e(bd.a_curve(grid, params), params)
    summary = {**report.summary(), "xi": gamma.xi, "xi_e": xi_e, "regime": params.regime.value}
    run.write_json("smoothfit.json", summary)
    run.manifest()
    click.echo(json.dumps(summary, default=_json_default))


@main.command("risk-curve")
@common_options
@click.option("--pis", default=None, help="Comma-separated prior probabilities; default 0, 0.05, ..., 0.95.")
@click.pass_context
@guarded
def risk_curve_cmd(ctx, workers, pis, **kw):
    """Minimum Bayes risk U over prior probabilities; writes risk_curve.csv."""
    cfg = build_config(kw)
    run = Run("risk-curve", cfg, ctx.obj["cache_dir"])
    params = cfg.model()
    cached, _ = ensure_solved(run, params, workers)
    grid = cached.grid
    levels = _float_list(pis) or [round(0.05 * j, 10) for j in range(20)]
    rows = []
    for p in levels:
        pp = validate(params.lam, params.mu, params.c, params.m, p)
        start = initial_tilde(pp)
        inside_d = start.phi0 + start.phi1 < params.xi_star
        if inside_d and (start.phi0 >= grid.spec.x_max or start.phi1 >= grid.spec.y_max):
            raise DisorderError(errors.INVALID_ARGUMENT, f"pi={p} starts outside the solved window")
        rows.append((p, min_bayes_risk(pp, j_zero(grid, start, pp)[0], atol=1e-9)))
    run.record("risk_curve.csv", artifacts.write_csv(run.out / "risk_curve.csv", ["pi", "U"], rows))
    run.manifest()
    click.echo(json.dumps({"rows": len(rows)}))


if __name__ == "__main__":  # pragma: no cover
    main()
