"""Command-line front end.

Exit codes: 0 success; 1 inadmissible material or failed optimality check;
2 malformed input (config, mesh, sidecar); 3 solvability margin not strictly
positive; 4 solver did not converge.
"""

from __future__ import annotations

import argparse
import contextlib
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config, material_from
from .fem import FemError
from .friction_vi import MarginError, VIConvergenceError, VIOptions
from .material import MaterialError, c0_margin, check_admissible
from .mesh import MeshError, cube_mesh, load_mesh, shell_mesh, tube_mesh, write_mesh
from .scenarios import ScenarioError

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_MARGIN, EXIT_NOCONV = 0, 1, 2, 3, 4


def _fmt(x) -> str:
    return f"{x:.17g}"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name("." + path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


class _Out:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, *lines):
        if not self.quiet:
            for ln in lines:
                print(ln)


def _scenario_from(cfg: RunConfig):
    from .scenarios import ScenarioData

    mat = material_from(cfg)
    mesh = load_mesh(cfg.path("mesh.path"))
    n = mesh.n_nodes
    kind = cfg.get_str("scenario.kind")

    def one(key):
        v = cfg.node_field(key, n)
        return None if v is None else v[:, 0]

    return ScenarioData(
        kind=kind,
        material=mat,
        mesh=mesh,
        X_tilde=cfg.node_field("scenario.body_force", n),
        f=cfg.node_field("scenario.f", n),
        Psi=cfg.node_field("scenario.Psi", n),
        F0=one("scenario.F0"),
        phi=cfg.node_field("scenario.phi", n),
        friction=one("scenario.friction"),
        g=one("scenario.g"),
        variant=cfg.get_str("scenario.variant", "dirichlet"),
    )


def _vi_options(cfg: RunConfig) -> VIOptions:
    solver = cfg.get_str("vi.solver", "uzawa")
    if solver not in ("uzawa", "semismooth"):
        raise ConfigError(f"vi.solver must be uzawa or semismooth, got {solver!r}")
    rho = cfg.get_float("vi.rho") if cfg.has("vi.rho") else None
    return VIOptions(tol=cfg.get_float("vi.tol", 1e-9), max_iter=cfg.get_int("vi.max_iter", 100000), rho=rho, solver=solver)


def _out_dir(args, cfg: RunConfig) -> Path:
    if args.out:
        return Path(args.out)
    return cfg.path("output.dir", ".")


def cmd_check_material(args, out) -> int:
    cfg = load_config(args.config)
    p = material_from(cfg)
    rep = check_admissible(p)
    c0 = c0_margin(p)
    if rep.admissible:
        out(f"admissible, c0 = {c0:.10e}", f"margin = {rep.margin:.10e}")
        return EXIT_OK
    out(f"inadmissible, c0 = {c0:.10e}", f"margin = {rep.margin:.10e}", "violated: " + ", ".join(rep.violated))
    return EXIT_FAIL


def _report(sd, res, opts, cfg) -> str:
    sol = res.solution
    tm = res.prepared.trace
    mat = sd.material
    lines = [
        "hemivar solve report",
        "",
        "[material]",
        *(f"{k:<8s} = {v:.10e}" for k, v in zip(("alpha", "beta", "gamma", "delta", "lambda", "mu", "nu", "kappa", "epsilon", "rho"), list(mat.moduli()) + [mat.rho])),
        f"c0       = {c0_margin(mat):.10e}",
        "",
        "[mesh]",
        f"nodes = {sd.mesh.n_nodes}  tets = {len(sd.mesh.tets)}  boundary triangles = {len(sd.mesh.btris)}",
        f"region = {sd.mesh.region}  contact nodes = {tm.n}  S1 nodes = {int(tm.is_s1.sum())}  far nodes = {len(tm.far_nodes)}",
        "",
        "[scenario]",
        f"kind = {sd.kind}" + (f"  variant = {sd.variant}" if sd.kind == "D" else ""),
        f"operator = {res.prepared.dtn.kind}  dofs = {res.prepared.dtn.n}  coercivity c = {res.prepared.dtn.coercivity_c:.10e}",
        "",
        "[solver]",
        f"method = {sol.solver}  iterations = {sol.iterations}  tol = {opts.tol:.3e}",
        f"relative residual = {sol.residual:.3e}",
        f"energy J(h0) = {sol.energy:.10e}",
        f"friction nodes = {len(res.problem.nodes)}  slipping = {int(np.sum(np.linalg.norm(res.problem.slip(sol.h0), axis=1) > 1e-9 * max(np.abs(sol.h0).max(initial=0.0), 1e-300)))}",
    ]
    if res.margin is not None:
        lines += ["", "[solvability]", *res.margin.lines()]
    lines += ["", f"[kkt] tol = {res.kkt.tol:.1e}  result = {'pass' if res.kkt.passed else 'FAIL'}", *res.kkt.lines()]
    if len(res.kkt.indeterminate):
        lines.append(f"indeterminate nodes (g = 0): {len(res.kkt.indeterminate)}")
    lines += ["", "[boundary conditions of the original problem]"]
    lines += [f"{k:<22s} = {v:.3e}" for k, v in res.residual.items()]
    W = res.field
    lines += ["", "[field]", f"max |u| = {np.abs(W[:, :3]).max():.10e}", f"max |w| = {np.abs(W[:, 3:]).max():.10e}", ""]
    return "\n".join(lines)


def _field_text(W) -> str:
    return "".join(f"{i} " + " ".join(_fmt(v) for v in row) + "\n" for i, row in enumerate(W))


def cmd_solve(args, out) -> int:
    from .scenarios import solve_scenario
    from .steklov import dump_dtn

    cfg = load_config(args.config)
    sd = _scenario_from(cfg)
    opts = _vi_options(cfg)
    thr = cfg.get_int("solver.direct_threshold", 200000)
    res = solve_scenario(sd, opts, direct_threshold=thr)
    d = _out_dir(args, cfg)
    _atomic_write(d / "report.txt", _report(sd, res, opts, cfg))
    _atomic_write(d / "solution.field", _field_text(res.field))
    if cfg.has("output.dtn_cache"):
        dump_dtn(res.prepared.dtn, cfg.path("output.dtn_cache"))
    out(f"kind {sd.kind}: {res.solution.solver} converged in {res.solution.iterations} iterations; KKT {'pass' if res.kkt.passed else 'FAIL'}", f"wrote {d / 'report.txt'}")
    return EXIT_OK if res.kkt.passed else EXIT_FAIL


def cmd_sensitivity(args, out) -> int:
    from .scenarios import lipschitz_experiment

    cfg = load_config(args.config)
    sd = _scenario_from(cfg)
    n = sd.mesh.n_nodes
    dg = cfg.node_field("sensitivity.dg", n)
    dF0 = cfg.node_field("sensitivity.dF0", n)
    dphi = cfg.node_field("sensitivity.dphi", n)
    if dg is None and dF0 is None and dphi is None:
        raise ConfigError("missing key sensitivity.dg / sensitivity.dF0 / sensitivity.dphi (at least one)")
    dg = np.zeros(n) if dg is None else dg[:, 0]
    dF0 = np.zeros(n) if dF0 is None else dF0[:, 0]
    dphi = np.zeros((n, 3)) if dphi is None else dphi
    if cfg.has("sensitivity.scales"):
        try:
            scales = [float(t) for t in cfg.raw("sensitivity.scales").split()]
        except ValueError:
            raise ConfigError("sensitivity.scales must be a list of numbers") from None
        if any(t < 0 for t in scales):
            raise ConfigError("sensitivity.scales must be nonnegative")
    else:
        scales = [2.0**-k for k in range(9)]
    fam = [(t, t * dg, t * dF0, t * dphi) for t in scales]
    rows = lipschitz_experiment(sd, fam, _vi_options(cfg), cfg.get_int("solver.direct_threshold", 200000))
    text = "t,data_norm,diff_norm,ratio\n" + "".join(
        f"{_fmt(r.t)},{_fmt(r.data_norm)},{_fmt(r.diff_norm)},{'' if r.ratio is None else _fmt(r.ratio)}\n" for r in rows
    )
    d = _out_dir(args, cfg)
    _atomic_write(d / "sensitivity.csv", text)
    ratios = [r.ratio for r in rows if r.ratio is not None]
    if ratios:
        out(f"ratio range [{min(ratios):.6e}, {max(ratios):.6e}], spread {max(ratios) / min(ratios):.4f}")
    out(f"wrote {d / 'sensitivity.csv'}")
    return EXIT_OK


def cmd_check_solvability(args, out) -> int:
    from .scenarios import build_problem, prepare
    from .solvability import check_necessary

    cfg = load_config(args.config)
    sd = _scenario_from(cfg)
    if sd.kind not in ("B", "C"):
        out(f"kind {sd.kind} is coercive: no compatibility condition")
        return EXIT_OK
    prep = prepare(sd, cfg.get_int("solver.direct_threshold", 200000))
    prob, _ = build_problem(sd, prep)
    rep = check_necessary(prob)
    out(*rep.lines())
    return EXIT_OK if rep.strict else EXIT_MARGIN


def cmd_make_mesh(args, out) -> int:
    s1 = tuple(f for f in (args.s1 or "").split(",") if f)
    for f in s1:
        if len(f) != 2 or f[0] not in "xyz" or f[1] not in "+-":
            raise ConfigError(f"bad face name {f!r}; use x-, x+, y-, ...")
    if args.shape == "cube":
        m = cube_mesh(args.n, args.size, s1)
    elif args.shape == "shell":
        m = shell_mesh(args.size / 2, args.n, args.far, args.layers, s1)
    else:
        m = tube_mesh(args.r_in, args.r_out, args.height, args.nr, args.ntheta, args.nz)
    path = Path(args.out_file)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_mesh(m, path.with_name("." + path.name + ".tmp"))
    os.replace(path.with_name("." + path.name + ".tmp"), path)
    out(f"wrote {path}: {m.n_nodes} nodes, {len(m.tets)} tets, {len(m.btris)} boundary triangles")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hemivar", description="Tresca friction contact in hemitropic micropolar elasticity")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", required=True, help="run configuration file")
        if out:
            p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--quiet", action="store_true")

    common(sub.add_parser("check-material", help="check admissibility of the moduli"), out=False)
    common(sub.add_parser("solve", help="solve a contact scenario"))
    common(sub.add_parser("sensitivity", help="data-dependence (Lipschitz) experiment"))
    common(sub.add_parser("check-solvability", help="compatibility margin for kinds B and C"), out=False)
    mm = sub.add_parser("make-mesh", help="write a generated mesh")
    mm.add_argument("shape", choices=("cube", "shell", "tube"))
    mm.add_argument("--out", dest="out_file", required=True, help="mesh file to write")
    mm.add_argument("--n", type=int, default=2, help="cells per edge (cube, shell)")
    mm.add_argument("--size", type=float, default=1.0, help="cube edge length (cube, shell inner cube)")
    mm.add_argument("--s1", default="x-", help="comma-separated faces tagged S1, e.g. 'x-,y+' ('' for none)")
    mm.add_argument("--far", type=float, default=None, help="shell: half-width of the far boundary")
    mm.add_argument("--layers", type=int, default=2, help="shell: layers per doubling of the radius")
    mm.add_argument("--r-in", type=float, default=0.5)
    mm.add_argument("--r-out", type=float, default=1.0)
    mm.add_argument("--height", type=float, default=1.0)
    mm.add_argument("--nr", type=int, default=1)
    mm.add_argument("--ntheta", type=int, default=12)
    mm.add_argument("--nz", type=int, default=2)
    mm.add_argument("--quiet", action="store_true")
    return ap


COMMANDS = {
    "check-material": cmd_check_material,
    "solve": cmd_solve,
    "sensitivity": cmd_sensitivity,
    "check-solvability": cmd_check_solvability,
    "make-mesh": cmd_make_mesh,
}


def _thread_limit():
    val = os.environ.get("HEMIVAR_THREADS")
    if not val:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    try:
        n = int(val)
    except ValueError:
        raise ConfigError(f"HEMIVAR_THREADS must be a positive integer, got {val!r}") from None
    if n < 1:
        raise ConfigError(f"HEMIVAR_THREADS must be a positive integer, got {val!r}")
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    out = _Out(getattr(args, "quiet", False))
    err = sys.stderr
    try:
        with _thread_limit():
            return COMMANDS[args.command](args, out)
    except (ConfigError, MeshError, ScenarioError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_PARSE
    except MaterialError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_FAIL
    except MarginError as exc:
        print(f"error: {exc}", file=err)
        for ln in exc.report.lines():
            print(ln, file=err)
        return EXIT_MARGIN
    except VIConvergenceError as exc:
        print(f"error: {exc}", file=err)
        for it, r in exc.history[-10:]:
            print(f"  iteration {it}: residual {r:.3e}", file=err)
        return EXIT_NOCONV
    except (FemError, ValueError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
