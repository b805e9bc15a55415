"""On-disk artifacts: the value-grid cache, boundary tables and CSV helpers.

Cached grids are addressed by a hash of everything that determines them
(model constants except the prior probability, grid, tolerance).  Every
artifact records the sha256 of its payload and loaders refuse payloads
whose hash no longer matches.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import errors
from .boundary import BoundaryCurve
from .errors import DisorderError
from .model import ModelParams, validate
from .solver import GridSpec, IterationReport, ValueGrid

CACHE_ENV = "POISSON_DISORDER_CACHE"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | os.PathLike) -> str:
    return sha256_bytes(Path(path).read_bytes())


def cache_dir(default: str | os.PathLike | None = None) -> Path:
    """Cache location: the environment override, else ``default``, else ./.poisson_disorder_cache."""
    env = os.environ.get(CACHE_ENV)
    path = Path(env) if env else Path(default) if default else Path(".poisson_disorder_cache")
    path.mkdir(parents=True, exist_ok=True)
    return path


def value_key(params: ModelParams, spec: GridSpec, epsilon: float, refine: bool = True) -> str:
    """Content address of a solve; the prior probability does not change the value function."""
    body = {"lambda": params.lam, "mu": params.mu, "c": params.c, "m": params.m,
            "grid": spec.to_dict(), "epsilon": float(epsilon), "refine": bool(refine)}
    return sha256_bytes(canonical_json(body).encode())[:32]


@dataclass
class CachedSolve:
    grid: ValueGrid
    previous: ValueGrid | None
    report: IterationReport
    key: str
    content_hash: str


def _grid_bytes(values: np.ndarray, previous: np.ndarray | None) -> bytes:
    buf = io.BytesIO()
    arrays = {"values": values}
    if previous is not None:
        arrays["previous"] = previous
    np.savez(buf, **arrays)
    return buf.getvalue()


def save_solve(directory: Path, key: str, grid: ValueGrid, previous: ValueGrid | None,
               report: IterationReport) -> CachedSolve:
    data = _grid_bytes(np.asarray(grid.values), None if previous is None else np.asarray(previous.values))
    digest = sha256_bytes(data)
    (directory / f"{key}.npz").write_bytes(data)
    meta = {"key": key, "content_sha256": digest, "params": grid.params.to_dict(), "spec": grid.spec.to_dict(),
            "n_iter": grid.n_iter, "previous_n_iter": None if previous is None else previous.n_iter,
            "report": report.to_dict()}
    (directory / f"{key}.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return CachedSolve(grid, previous, report, key, digest)


def load_solve(directory: Path, key: str, params: ModelParams) -> CachedSolve | None:
    """Cached solve for ``key`` rebound to ``params``; None when absent."""
    npz, meta_path = directory / f"{key}.npz", directory / f"{key}.json"
    if not (npz.exists() and meta_path.exists()):
        return None
    meta = json.loads(meta_path.read_text())
    data = npz.read_bytes()
    digest = sha256_bytes(data)
    if digest != meta.get("content_sha256"):
        raise DisorderError(errors.CACHE_MISMATCH, f"cache entry {key} does not match its recorded hash")
    stored = meta["params"]
    if any(stored[k] != params.to_dict()[k] for k in ("lambda", "mu", "c", "m")):
        raise DisorderError(errors.CACHE_MISMATCH, f"cache entry {key} was built for other parameters")
    spec = GridSpec.from_dict(meta["spec"])
    with np.load(io.BytesIO(data)) as arrays:
        values = arrays["values"]
        prev_values = arrays["previous"] if "previous" in arrays else None
    rep = meta["report"]
    report = IterationReport(rep["n_final"], rep["sup_residual"], rep["bound_used"],
                             tuple(rep["sup_diff_history"]), rep["epsilon"], rep["seconds"])
    n = meta["n_iter"]
    history = tuple(rep["sup_diff_history"])
    grid = ValueGrid(values, n, params, spec, history)
    previous = None
    if prev_values is not None:
        previous = ValueGrid(prev_values, meta["previous_n_iter"], params, spec, history[:-1])
    return CachedSolve(grid, previous, report, key, digest)


def fmt(v) -> str:
    """Round-trip float text."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """Write a CSV with round-trip floats and return its sha256."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    data = buf.getvalue().encode()
    path.write_bytes(data)
    return sha256_bytes(data)


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DisorderError(errors.INVALID_ARGUMENT, f"{path} is empty")
    return rows[0], rows[1:]


def write_grid_csv(path: Path, grid: ValueGrid) -> str:
    xs, ys = grid.spec.xs, grid.spec.ys
    v = grid.values
    return write_csv(path, ["x", "y", "v"], ((xs[i], ys[j], v[i, j]) for i in range(xs.size) for j in range(ys.size)))


def write_boundary(path: Path, curve: BoundaryCurve, labels: Sequence[str] | None, meta: dict) -> str:
    labels = labels if labels is not None else [""] * curve.xs.size
    digest = write_csv(path, ["x", "gamma", "classification"], zip(curve.xs, curve.ys, labels))
    meta = dict(meta, xi=curve.xi, content_sha256=digest)
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return digest


def read_boundary(path: Path, params: ModelParams | None = None) -> tuple[BoundaryCurve, dict]:
    """Boundary curve from a CSV written by :func:`write_boundary`, checked against its sidecar."""
    path = Path(path)
    side = path.with_suffix(".json")
    if not path.exists() or not side.exists():
        raise DisorderError(errors.MISSING_ARTIFACT, f"boundary artifact {path} not found")
    meta = json.loads(side.read_text())
    if sha256_file(path) != meta.get("content_sha256"):
        raise DisorderError(errors.CACHE_MISMATCH, f"{path} does not match its recorded hash")
    if params is not None and "params" in meta:
        stored = meta["params"]
        if any(stored[k] != params.to_dict()[k] for k in ("lambda", "mu", "c", "m")):
            raise DisorderError(errors.CACHE_MISMATCH, f"{path} was built for other parameters")
    header, rows = read_csv(path)
    if header[:2] != ["x", "gamma"]:
        raise DisorderError(errors.INVALID_ARGUMENT, f"{path} has unexpected columns {header}")
    xs = np.array([float(r[0]) for r in rows])
    ys = np.array([float(r[1]) for r in rows])
    return BoundaryCurve(xs, ys, float(meta["xi"])), meta


def params_from_meta(meta: dict) -> ModelParams:
    p = meta["params"]
    return validate(p["lambda"], p["mu"], p["c"], p["m"], p.get("pi", 0.0))
