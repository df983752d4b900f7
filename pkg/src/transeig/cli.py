"""Command-line driver: ``transeig {direct,multilevel,adaptive,oracle,rates,export-mesh}``.

Solver modes read an INI-style config with ``[problem]``, ``[solver]`` and
``[output]`` sections.  Exit status is 0 on success, 1 on a numerical
failure and 2 on a usage or configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import linalg
from .adaptive import AdaptiveConfig, adaptive_multilevel
from .eigensolve import CLUSTER_RADIUS, K0_TOL, EigenError, k_values, solve_direct
from .forms import CoefficientField, ExprError, preset, PRESET_DOMAINS
from .geometry import DOMAINS, MeshError, build_initial_mesh, refine_uniform, write_mesh
from .multilevel import Level, MultilevelConfig, convergence_slope, multilevel_solve
from .oracle import DiskParams, disk_eigenvalues, eigenfunction_error, modes_for
from .space import write_field_csv

log = logging.getLogger("transeig")

MODES = ("direct", "multilevel", "adaptive")
TRACE_HEADER = ["level", "dofs", "h", "j", "k_re", "k_im", "lambda_re", "lambda_im", "err_abs"]
ERROR_HEADER = ["level", "dofs", "h", "eig_err_sum", "l2_w", "l2_v", "h1_w", "h1_v"]


class ConfigError(ValueError):
    pass


def _fmt(x) -> str:
    return "" if x is None else format(float(x), ".17g")


@dataclass
class RunConfig:
    domain: str
    coeff: CoefficientField
    mode: str = "multilevel"
    H: float = 0.25
    h1_refinements: int = 1
    levels: int = 4
    beta: int = 2
    nev: int = 16
    sigma: complex | None = None
    first: int = 6
    cluster: tuple | None = None
    radius: float = CLUSTER_RADIUS
    k0_tol: float = K0_TOL
    eig_tol: float = 1e-10
    drop_tol: float = 1e-10
    theta: float = 0.5
    max_dofs: int = 120_000
    max_iterations: int = 60
    out: Path = Path("results")
    eigenfunctions: bool = False
    dump_meshes: bool = False
    seed: int = 20140101

    def multilevel(self) -> MultilevelConfig:
        return MultilevelConfig(
            H=self.H, levels=self.levels, first=self.first, nev=self.nev, sigma=self.sigma,
            beta=self.beta, h1_refinements=self.h1_refinements, radius=self.radius,
            k0_tol=self.k0_tol, eig_tol=self.eig_tol, drop_tol=self.drop_tol,
            cluster=self.cluster, seed=self.seed,
        )

    def adaptive(self) -> AdaptiveConfig:
        return AdaptiveConfig(
            H=self.H, first=self.first, nev=self.nev, sigma=self.sigma, theta=self.theta,
            max_dofs=self.max_dofs, max_iterations=self.max_iterations, radius=self.radius,
            k0_tol=self.k0_tol, eig_tol=self.eig_tol, drop_tol=self.drop_tol,
            h1_refinements=self.h1_refinements, seed=self.seed,
        )


def _get(sec, key, conv, default):
    if sec is None or key not in sec:
        return default
    raw = sec[key].strip()
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid value for {key!r}: {raw!r} ({exc})") from None


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _cluster(s: str):
    parts = [int(p) for p in s.replace(" ", "").split(",")]
    if len(parts) != 3:
        raise ValueError("expected 'i,m,q'")
    return tuple(parts)


def load_config(path, mode: str | None = None) -> RunConfig:
    """Parse and validate a run config; raises ConfigError (or ExprError) on bad input."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    prob = cp["problem"] if cp.has_section("problem") else None
    solv = cp["solver"] if cp.has_section("solver") else None
    outp = cp["output"] if cp.has_section("output") else None
    if prob is None:
        raise ConfigError("config needs a [problem] section")

    name = _get(prob, "preset", str, None)
    domain = _get(prob, "domain", str, PRESET_DOMAINS.get(name) if name else None)
    if domain not in DOMAINS:
        raise ConfigError(f"unknown or missing domain {domain!r}; expected one of {DOMAINS}")
    keys = ("A11", "A12", "A22", "n")
    if name:
        try:
            coeff = preset(name)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    else:
        missing = [k for k in keys if k not in prob]
        if missing:
            raise ConfigError(f"coefficients need a preset or all of {keys}; missing {missing}")
        try:
            coeff = CoefficientField.from_strings(
                prob["A11"], prob["A12"], prob["A22"], prob["n"],
                condition=_get(prob, "condition", str, "gamma>1"),
                gamma=_get(prob, "gamma", float, 1.5),
            )
        except ExprError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    cfg = RunConfig(domain=domain, coeff=coeff)
    cfg.mode = mode or _get(solv, "mode", str, "multilevel")
    if cfg.mode not in MODES:
        raise ConfigError(f"unknown solver mode {cfg.mode!r}")
    cfg.H = _get(solv, "H", float, cfg.H)
    h1 = _get(solv, "h1", float, None)
    cfg.beta = _get(solv, "beta", int, cfg.beta)
    if cfg.H <= 0:
        raise ConfigError("H must be positive")
    if cfg.beta != 2:
        raise ConfigError("only beta = 2 is supported")
    if h1 is not None:
        if h1 <= 0 or h1 > cfg.H:
            raise ConfigError("h1 must satisfy 0 < h1 <= H")
        r = math.log(cfg.H / h1, cfg.beta)
        if abs(r - round(r)) > 1e-9:
            raise ConfigError("H / h1 must be a power of beta")
        cfg.h1_refinements = int(round(r))
    cfg.levels = _get(solv, "levels", int, cfg.levels)
    cfg.nev = _get(solv, "nev", int, cfg.nev)
    cfg.sigma = _get(solv, "sigma", complex, None)
    cfg.first = _get(solv, "first", int, cfg.first)
    cfg.cluster = _get(solv, "cluster", _cluster, None)
    cfg.radius = _get(solv, "radius", float, cfg.radius)
    cfg.k0_tol = _get(solv, "k0_tol", float, cfg.k0_tol)
    cfg.eig_tol = _get(solv, "eig_tol", float, cfg.eig_tol)
    cfg.drop_tol = _get(solv, "drop_tol", float, cfg.drop_tol)
    cfg.theta = _get(solv, "theta", float, cfg.theta)
    cfg.max_dofs = int(_get(solv, "max_dofs", float, cfg.max_dofs))
    cfg.max_iterations = _get(solv, "max_iterations", int, cfg.max_iterations)
    cfg.out = Path(_get(outp, "out", str, str(cfg.out)))
    cfg.eigenfunctions = _get(outp, "eigenfunctions", _bool, False)
    cfg.dump_meshes = _get(outp, "dump_meshes", _bool, False)
    cfg.seed = _get(outp, "seed", int, cfg.seed)
    if cfg.levels < 1 or cfg.nev < 1 or cfg.first < 1 or cfg.max_iterations < 1:
        raise ConfigError("levels, nev, first and max_iterations must be positive")
    if not (0 < cfg.theta < 1):
        raise ConfigError("theta must lie in (0, 1)")
    if cfg.radius <= 0 or cfg.k0_tol < 0 or cfg.eig_tol <= 0 or cfg.drop_tol <= 0:
        raise ConfigError("tolerances must be positive")
    if cfg.mode == "adaptive" and cfg.domain == "unit-disk":
        raise ConfigError("adaptive mode needs a polygonal domain")
    try:
        MultilevelConfig(H=cfg.H, levels=cfg.levels, cluster=cfg.cluster)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        coeff.check(domain)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _disk_oracle(cfg: RunConfig):
    """Exact modes when the problem is the constant-coefficient disk, else None."""
    c = cfg.coeff
    if cfg.domain != "unit-disk":
        return None
    consts = [e.is_constant for e in (c.A11, c.A12, c.A22, c.n)]
    if not all(consts):
        return None
    a11, a12, a22, n = (float(e(0.0, 0.0)) for e in (c.A11, c.A12, c.A22, c.n))
    if a12 != 0 or a11 != a22:
        return None
    params = DiskParams(a=a11, n=n)
    return params, disk_eigenvalues(params)


class Recorder:
    """Collects per-level rows and writes the CSV artifacts."""

    def __init__(self, cfg: RunConfig, oracle):
        self.cfg = cfg
        self.oracle = oracle
        self.trace = []
        self.errors = []
        cfg.out.mkdir(parents=True, exist_ok=True)

    def __call__(self, level, clusters):
        lams = np.concatenate([c.lambdas for c in clusters])
        ks = k_values(lams)
        exact = None
        if self.oracle is not None:
            _, modes = self.oracle
            exact = np.array([modes_for(k.real, modes)[0].k for k in ks])
        h = level.h
        rows = []
        for j, (lam, k) in enumerate(zip(lams, ks), start=1):
            err = abs(k - exact[j - 1]) if exact is not None else None
            rows.append([level.index, level.dofs, h, j, k.real, k.imag, lam.real, lam.imag, err])
        self.trace += rows
        self._write(self.cfg.out / f"eigs_level{level.index}.csv", TRACE_HEADER, rows)
        if self.oracle is not None:
            params, modes = self.oracle
            e0 = {"w": 0.0, "v": 0.0}
            e1 = {"w": 0.0, "v": 0.0}
            for c in clusters:
                md = modes_for(float(c.k[0].real), modes)
                for acc, s in ((e0, 0), (e1, 1)):
                    for key, val in eigenfunction_error(c, md, level.mesh, s, params).items():
                        acc[key] += val
            self.errors.append([level.index, level.dofs, h, float(np.sum(np.abs(ks - exact))),
                                e0["w"], e0["v"], e1["w"], e1["v"]])
        if self.cfg.eigenfunctions:
            j = 1
            for c in clusters:
                for U in c.fields():
                    write_field_csv(U, self.cfg.out / f"eigfun_level{level.index}_j{j}.csv")
                    j += 1

    @staticmethod
    def _write(path, header, rows):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([r[0], r[1]] + [_fmt(x) if not isinstance(x, (int, np.integer)) else x
                                           for x in r[2:]])

    def finish(self):
        out = self.cfg.out
        self._write(out / "convergence.csv", TRACE_HEADER, self.trace)
        paths = [out / "convergence.csv"]
        if self.errors:
            self._write(out / "errors.csv", ERROR_HEADER, self.errors)
            paths.append(out / "errors.csv")
        lines = []
        for p in paths:
            try:
                slopes = fit_rates(p, last=3)
            except ValueError as exc:
                lines.append(f"# {p.name}: {exc}")
                continue
            lines += [f"{p.name}:{name} {_fmt(v)}" for name, v in slopes.items()]
        (out / "rates.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        return lines


def fit_rates(path, last: int | None = None, min_points: int = 3) -> dict:
    """Log-log slopes against dofs for every error column of a CSV.

    A trace file (columns ``j`` and ``err_abs``) is reduced to the
    per-level sum of ``err_abs`` first.  ``last`` restricts the fit to the
    final rows (levels).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    cols = rows[0].keys()
    if "dofs" not in cols:
        raise ValueError(f"{path}: no 'dofs' column")
    series = {}
    if "j" in cols and "err_abs" in cols:
        per = {}
        for r in rows:
            if r["err_abs"] == "":
                continue
            key = (r.get("level", r["dofs"]), float(r["dofs"]))
            per[key] = per.get(key, 0.0) + float(r["err_abs"])
        dofs = [k[1] for k in per]
        series["eig_err_sum"] = (dofs, list(per.values()))
    else:
        skip = {"level", "dofs", "h", "j"}
        dofs = [float(r["dofs"]) for r in rows]
        for c in cols:
            if c in skip:
                continue
            try:
                vals = [float(r[c]) for r in rows]
            except ValueError:
                continue
            series[c] = (dofs, vals)
    if not series:
        raise ValueError(f"{path}: no error columns")
    out = {}
    for name, (d, v) in series.items():
        d, v = np.asarray(d), np.asarray(v)
        if last:
            d, v = d[-last:], v[-last:]
        out[name] = convergence_slope(d, v, min_points)
    return out


def _run_direct(cfg: RunConfig, rec: Recorder):
    mesh = build_initial_mesh(cfg.domain, cfg.H)
    for _ in range(cfg.h1_refinements):
        mesh = refine_uniform(mesh)
    sigma = cfg.sigma if cfg.sigma is not None else 1.0 + 2.0**2
    for ell in range(1, cfg.levels + 1):
        if ell > 1:
            mesh = refine_uniform(mesh)
        level = Level.build(mesh, cfg.coeff, index=ell)
        clusters = solve_direct(mesh, level.dofmap, cfg.coeff, cfg.nev, sigma, forms=level.forms,
                                k0_tol=cfg.k0_tol, radius=cfg.radius, first=cfg.first,
                                tol=cfg.eig_tol)
        rec(level, clusters)
        if cfg.dump_meshes:
            write_mesh(mesh, cfg.out / f"mesh_level{ell}.txt")


def run_experiment(cfg: RunConfig) -> list[str]:
    rec = Recorder(cfg, _disk_oracle(cfg))
    if cfg.mode == "direct":
        _run_direct(cfg, rec)
    elif cfg.mode == "multilevel":
        def cb(level, clusters):
            rec(level, clusters)
            if cfg.dump_meshes:
                write_mesh(level.mesh, cfg.out / f"mesh_level{level.index}.txt")
        multilevel_solve(cfg.multilevel(), cfg.domain, cfg.coeff, callback=cb)
    else:
        mesh_cb = None
        if cfg.dump_meshes:
            def mesh_cb(it, mesh):
                write_mesh(mesh, cfg.out / f"mesh_level{it}.txt")
        adaptive_multilevel(cfg.adaptive(), cfg.domain, cfg.coeff, callback=rec, mesh_callback=mesh_cb)
    return rec.finish()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="transeig", description="Transmission eigenvalues by P1 FEM.")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")
    # also accepted after the subcommand; SUPPRESS keeps a leading --quiet intact
    quiet = dict(action="store_true", default=argparse.SUPPRESS, help="suppress progress output")
    sub = p.add_subparsers(dest="command", required=True)
    for mode in MODES:
        s = sub.add_parser(mode, help=f"{mode} solve from a config file")
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--out", type=Path, help="output directory (overrides config)")
        s.add_argument("--quiet", **quiet)
    o = sub.add_parser("oracle", help="exact disk eigenvalues as m,k,multiplicity CSV")
    o.add_argument("--a", type=float, default=2.0)
    o.add_argument("--n", type=float, default=8.0)
    o.add_argument("--mmax", type=int, default=8)
    o.add_argument("--kmax", type=float, default=10.0)
    o.add_argument("--quiet", **quiet)
    r = sub.add_parser("rates", help="fit log-log slopes of a CSV against dofs")
    r.add_argument("csv", type=Path)
    r.add_argument("--last", type=int, default=None, help="use only the last N levels")
    r.add_argument("--out", type=Path, help="write rates.txt here (default: next to the CSV)")
    r.add_argument("--quiet", **quiet)
    e = sub.add_parser("export-mesh", help="write the uniform mesh hierarchy in text format")
    e.add_argument("--config", type=Path)
    e.add_argument("--domain", choices=DOMAINS)
    e.add_argument("--H", type=float, default=None)
    e.add_argument("--levels", type=int, default=None)
    e.add_argument("--out", type=Path, default=None)
    e.add_argument("--quiet", **quiet)
    return p


def _export_mesh(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        domain, H, levels, out = cfg.domain, cfg.H, cfg.levels, cfg.out
    else:
        if not args.domain:
            raise ConfigError("export-mesh needs --config or --domain")
        domain, H, levels, out = args.domain, 0.5, 1, Path("results")
    H = args.H if args.H is not None else H
    levels = args.levels if args.levels is not None else levels
    out = args.out or out
    if H <= 0 or levels < 0:
        raise ConfigError("H must be positive and levels nonnegative")
    out.mkdir(parents=True, exist_ok=True)
    mesh = build_initial_mesh(domain, H)
    write_mesh(mesh, out / "mesh_level0.txt")
    for ell in range(1, levels + 1):
        mesh = refine_uniform(mesh)
        write_mesh(mesh, out / f"mesh_level{ell}.txt")
    print(f"wrote {levels + 1} meshes to {out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s")
    try:
        if args.command in MODES:
            cfg = load_config(args.config, mode=args.command)
            if args.out:
                cfg.out = args.out
            for line in run_experiment(cfg):
                print(line)
        elif args.command == "oracle":
            params = DiskParams(a=args.a, n=args.n, m_max=args.mmax, k_max=args.kmax)
            print("m,k,multiplicity")
            for md in disk_eigenvalues(params):
                if md.parity == "cos":
                    print(f"{md.m},{_fmt(md.k)},{md.multiplicity}")
        elif args.command == "rates":
            slopes = fit_rates(args.csv, last=args.last)
            lines = [f"{name} {_fmt(v)}" for name, v in slopes.items()]
            dest = (args.out or args.csv.parent)
            dest.mkdir(parents=True, exist_ok=True)
            (dest / "rates.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
            print("\n".join(lines))
        else:
            return _export_mesh(args)
    except ExprError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (linalg.LinAlgFailure, EigenError, MeshError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # rates with too few rows, invalid oracle parameters
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
