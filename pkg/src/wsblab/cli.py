"""Batch command-line front end.

Usage examples::

    wsblab lagrange --mu 0.0121505856 --out out/
    wsblab zvc --energy -1.596 --out out/
    wsblab lyapunov --energy -1.5997 --out out/
    wsblab cut --energy -1.5997 --theta0 0 --order 0 --out out/
    wsblab wsb --order 2 --out out/
    wsblab compare --order 2 --out out/
    wsblab profile --order 2 --out out/

Configuration is a single JSON document (``--config``). Precedence, highest
first: command-line flags, config keys, built-in defaults. Every command
writes ``manifest.json`` in the output directory with the resolved
configuration and library versions. Failures exit non-zero and write
``error.json``; an energy outside the Lyapunov range exits with code 2.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .block import BlockSpec, default_block_spec, section_geometry, validate_block, validate_block_band, zero_velocity_curve
from .dynamics import SystemParams
from .equilibria import l1_spectrum, lagrange_points
from .errors import ConfigError, OutOfRange, WSBLabError
from .lyapunov import default_energy_ceiling, orbit_at_energy
from .manifolds import STABLE, cut, globalize, write_cut_csv
from .propagation import set_default_tolerances
from .wsb import (
    WSBQuery,
    compare_with_manifold,
    default_query,
    find_wsb_points,
    return_time_profile,
    write_comparison_json,
    write_wsb_csv,
)

log = logging.getLogger("wsblab")


@dataclass
class RunConfig:
    mu: float = 0.0121505856
    block: dict | None = None  # {"a": ..., "b": ...}
    H_star: float | None = None
    rtol: float = 1e-12
    atol: float = 1e-12
    energy: float | None = None
    theta0: float = 0.0
    rdot0: float = 0.0
    e0: float | None = None  # None: admissibility pre-scan
    n: int = 2
    cut_index: int = 0
    grid_step: float | None = None
    delta_r: float = 1e-8
    n_seeds: int = 200
    epsilon: float = 1e-6
    max_turns: int | None = None
    zvc_resolution: int = 400
    compare_mode: str = "exact"
    out: str = "wsblab-out"
    threads: int = 1

    def validate(self) -> None:
        if not 0.0 < self.mu <= 0.5:
            raise ConfigError(f"mu={self.mu} outside (0, 0.5]")
        if self.block is not None and not {"a", "b"} <= set(self.block):
            raise ConfigError("block override needs both 'a' and 'b'")
        if not (self.rtol > 0 and self.atol > 0):
            raise ConfigError("integrator tolerances must be positive")
        if self.e0 is not None and not 0.0 <= self.e0 < 1.0:
            raise ConfigError(f"e0={self.e0} outside [0, 1)")
        if self.n < 1 or self.cut_index < 0:
            raise ConfigError("order must be >= 1 and cut index >= 0")
        if self.delta_r <= 0 or self.n_seeds < 4 or self.epsilon <= 0:
            raise ConfigError("delta_r and epsilon must be positive, n_seeds >= 4")
        if self.compare_mode not in ("exact", "grid"):
            raise ConfigError(f"compare_mode must be 'exact' or 'grid', got {self.compare_mode!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _g(x) -> str:
    return f"{x:.10g}"


def _num(x):
    """Round floats (recursively) to 10 significant digits for JSON output."""
    if isinstance(x, dict):
        return {k: _num(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_num(v) for v in x]
    if isinstance(x, (float, np.floating)):
        return float(_g(float(x)))
    if isinstance(x, np.integer):
        return int(x)
    return x


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(_num(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")


class _Runner:
    """Shared state for one invocation: params, output directory, worker pool."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.params = SystemParams(cfg.mu)
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.pool = None
        set_default_tolerances(cfg.rtol, cfg.atol)

    def map(self, fn, items):
        if self.cfg.threads == 1:
            return map(fn, items)
        if self.pool is None:
            self.pool = ProcessPoolExecutor(
                self.cfg.threads, initializer=set_default_tolerances, initargs=(self.cfg.rtol, self.cfg.atol)
            )
        return self.pool.map(fn, items)

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    @property
    def H_star(self) -> float:
        return self.cfg.H_star if self.cfg.H_star is not None else default_energy_ceiling(self.params)

    def block(self) -> BlockSpec:
        if self.cfg.block is not None:
            return BlockSpec(float(self.cfg.block["a"]), float(self.cfg.block["b"]))
        return default_block_spec(self.params)

    def geometry(self):
        H1 = lagrange_points(self.params).energies["L1"]
        spec = validate_block_band(self.block(), H1, self.H_star, self.params)
        return section_geometry(spec, self.H_star, self.params)

    def energy(self) -> float:
        if self.cfg.energy is None:
            raise ConfigError("this command needs --energy")
        return self.cfg.energy

    def block_manifest(self, geom, samples=None) -> dict:
        return {
            "mu": self.params.mu,
            "a": geom.a,
            "b": geom.b,
            "H_star": geom.H_star,
            "D1": geom.D1,
            "y_b": geom.y_b,
            "theta1": geom.theta1,
            "validation": "passed",
            "samples": samples,
        }

    def query(self, geom) -> WSBQuery:
        c = self.cfg
        if c.e0 is None:
            q = default_query(c.n, geom, self.params, rdot0=c.rdot0, theta0=c.theta0, map_fn=self.map)
            log.info("admissibility pre-scan chose e0=%s", q.e0)
        else:
            q = WSBQuery(rdot0=c.rdot0, theta0=c.theta0, e0=c.e0, n=c.n)
        return dataclasses.replace(q, grid_step=c.grid_step, delta_r=c.delta_r)


def cmd_lagrange(run: _Runner) -> dict:
    pts = lagrange_points(run.params)
    spec = l1_spectrum(run.params)
    doc = {
        "mu": run.params.mu,
        "x_plus": pts.x_plus,
        "positions": {k: list(v) for k, v in pts.positions.items()},
        "energies": dict(pts.energies),
        "l1_spectrum": {"lambda": spec.lam, "nu": spec.nu, "linear_period": spec.linear_period},
    }
    _write_json(run.out / "lagrange.json", doc)
    return {"files": ["lagrange.json"]}


def cmd_zvc(run: _Runner) -> dict:
    H = run.energy()
    curves = zero_velocity_curve(H, run.params, resolution=run.cfg.zvc_resolution)
    with open(run.out / "zvc.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "x", "y"])
        for k, c in enumerate(curves):
            for x, y in c:
                w.writerow([k, _g(x), _g(y)])
    return {"files": ["zvc.csv"], "components": len(curves)}


def cmd_lyapunov(run: _Runner) -> dict:
    orbit = orbit_at_energy(run.energy(), run.params, H_max=run.H_star)
    doc = {
        "energy": orbit.energy,
        "state0": list(orbit.state0),
        "period": orbit.period,
        "amplitude": orbit.amplitude,
        "residual": orbit.residual,
        "lambda_max": orbit.lambda_max,
        "monodromy_det": float(np.linalg.det(orbit.monodromy)),
        "eigenvalues": [[float(z.real), float(z.imag)] for z in orbit.eigenvalues],
    }
    _write_json(run.out / "lyapunov.json", doc)
    return {"files": ["lyapunov.json"]}


def _branch(run: _Runner, turns: int):
    geom = run.geometry()
    orbit = orbit_at_energy(run.energy(), run.params, H_max=run.H_star)
    spec = validate_block(run.block(), orbit.energy, run.params)
    branch = globalize(orbit, STABLE, run.cfg.n_seeds, run.cfg.epsilon, run.params, max_turns=turns, block=(spec.a, spec.b))
    return geom, branch


def cmd_manifold(run: _Runner) -> dict:
    turns = run.cfg.max_turns if run.cfg.max_turns is not None else run.cfg.cut_index
    geom, branch = _branch(run, turns)
    statuses = {}
    for sd in branch.seeds:
        statuses[sd.status] = statuses.get(sd.status, 0) + 1
    doc = {
        "energy": branch.energy,
        "stability": branch.stability,
        "epsilon": branch.epsilon,
        "sign": branch.sign,
        "max_turns": branch.max_turns,
        "n_seeds": len(branch.seeds),
        "seed_status": statuses,
        "block": run.block_manifest(geom),
    }
    _write_json(run.out / "manifold.json", doc)
    return {"files": ["manifold.json"]}


def cmd_cut(run: _Runner) -> dict:
    idx = run.cfg.cut_index
    geom, branch = _branch(run, max(idx, run.cfg.max_turns or 0))
    c = cut(branch, run.cfg.theta0, idx, max_gap=2e-2)
    name = f"cut_{idx}.csv"
    write_cut_csv(run.out / name, c, run.params.mu)
    return {"files": [name], "closed": c.closed, "points": len(c.points)}


def cmd_wsb(run: _Runner) -> dict:
    geom = run.geometry()
    q = run.query(geom)
    points, scan = find_wsb_points(q, geom, run.params, map_fn=run.map)
    write_wsb_csv(run.out / "wsb.csv", points, q, run.params.mu)
    _write_json(run.out / "block.json", run.block_manifest(geom, samples=len(scan.samples)))
    _write_json(
        run.out / "stable_intervals.json",
        {"admissible": [list(iv) for iv in scan.admissible.intervals], "stable": [list(iv) for iv in scan.intervals]},
    )
    return {"files": ["wsb.csv", "block.json", "stable_intervals.json"], "points": len(points), "e0": q.e0}


def cmd_compare(run: _Runner) -> dict:
    geom = run.geometry()
    q = run.query(geom)
    points, _ = find_wsb_points(q, geom, run.params, map_fn=run.map)
    report = compare_with_manifold(points, q, run.params, mode=run.cfg.compare_mode, map_fn=run.map, H_max=run.H_star)
    write_wsb_csv(run.out / "wsb.csv", points, q, run.params.mu)
    write_comparison_json(run.out / "comparison.json", report)
    return {"files": ["wsb.csv", "comparison.json"], "max_distance": report.max_distance, "e0": q.e0}


def cmd_profile(run: _Runner) -> dict:
    geom = run.geometry()
    q = run.query(geom)
    points, _ = find_wsb_points(q, geom, run.params, map_fn=run.map)
    with open(run.out / "profile.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["point_index", "r0", "offset", "stable", "return_time", "return_r", "return_rdot"])
        for k, p in enumerate(points):
            prof = return_time_profile(p, q, geom, run.params)
            for r0, off, T, (rr, rd), v in zip(prof.r, prof.offsets, prof.return_times, prof.return_states, prof.verdicts):
                stable = int(v.is_stable(q.n))
                vals = [_g(T), _g(rr), _g(rd)] if stable else ["", "", ""]
                w.writerow([k, _g(r0), _g(off), stable] + vals)
    return {"files": ["profile.csv"], "points": len(points), "e0": q.e0}


COMMANDS = {
    "lagrange": cmd_lagrange,
    "zvc": cmd_zvc,
    "lyapunov": cmd_lyapunov,
    "manifold": cmd_manifold,
    "cut": cmd_cut,
    "wsb": cmd_wsb,
    "compare": cmd_compare,
    "profile": cmd_profile,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wsblab", description="Weak stability boundary and invariant manifold toolkit.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--mu", type=float, help="mass ratio")
    ap.add_argument("--energy", type=float, help="energy level H")
    ap.add_argument("--theta0", type=float, help="section angle about P1")
    ap.add_argument("--order", type=int, help="stability order n (wsb/compare/profile) or cut index (cut/manifold)")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--threads", type=int, help="worker processes; 1 gives bit-reproducible output")
    return ap


def resolve_config(args) -> RunConfig:
    d = {}
    if args.config:
        try:
            d = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
    for key in ("mu", "energy", "theta0", "out", "threads"):
        v = getattr(args, key)
        if v is not None:
            d[key] = v
    if args.order is not None:
        d["cut_index" if args.command in ("cut", "manifold") else "n"] = args.order
    cfg = RunConfig.from_dict(d)
    cfg.validate()
    return cfg


def _manifest(cfg: RunConfig, command: str, result: dict) -> dict:
    return {
        "command": command,
        "config": dataclasses.asdict(cfg),
        "result": result,
        "versions": {
            "wsblab": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("WSB_LAB_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    out = Path(args.out or "wsblab-out")
    run = None
    try:
        cfg = resolve_config(args)
        out = Path(cfg.out)
        run = _Runner(cfg)
        result = COMMANDS[args.command](run)
        _write_json(out / "manifest.json", _manifest(cfg, args.command, result))
        print(json.dumps(_num(result)))
        return 0
    except OutOfRange as exc:
        code, kind, msg = 2, "OutOfRange", str(exc)
    except (WSBLabError, ValueError) as exc:
        code, kind, msg = 1, type(exc).__name__, str(exc)
    finally:
        if run is not None:
            run.close()
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "error.json", {"error": kind, "message": msg, "exit_code": code})
    print(msg if msg.startswith(kind) else f"{kind}: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
