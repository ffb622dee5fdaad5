import argparse
import math
import sys
from typing import Optional, Sequence

import numpy as np

from basis import (
    BENCHMARK_FUNCTIONS, build_basis, interpolation_error, interpolation_operator_norm,
    lebesgue_bound, lebesgue_estimate,
)
from candidates import (
    PointSet, candidate_count_for, fill_pattern, fill_to_count, gravitational_relax, random_points,
)
from config_utils import ConfigError, RunDefaults, load_run_defaults
from fekete import (
    METHODS, PRECONDITIONERS, approximate_fekete, chebyshev_grid, compare_svd_qr,
    fekete_from_nodes, physical_rule,
)
from geometry import (
    REFERENCE_SHAPES, Polygon, bounding_box, hertel_mehlhorn, normalize_hull,
    points_in_polygon, reference_shape,
)
from io_utils import PolygonFormatError, read_csv, read_polygon, write_csv, write_pieces
from logger_utils import get_logger, numpy_warnings_logged, set_level, set_run_context, timed
from mesh import FAMILIES, benchmark_polygons, build_mesh
from moments import SPACES, MonomialSpec, boundary_moments
from quadrature import polygon_rule
from solver import (
    KINDS, UNKNOWNS, AcousticsModel, advance_rk4, assemble_dls, build_dg_operator, cfl_time_step,
    convergence_study, dirichlet_exterior, exact_solution, interpolate_state, l2_error, plane_wave,
    solve_dls,
)
from tabulation import (
    ROUTES, TableError, build_master_record, load_basis, record_from_basis, write_table,
)
from version import APP_VERSION


log = get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
CANDIDATE_KINDS = ("fill", "grav", "random", "chebyshev")


class UsageError(ValueError):
    """Raised for invalid command-line arguments."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_int_list(text: str) -> list:
    """'3', '1,2,5' or '2..8' to a list of integers."""
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            values = list(range(int(lo), int(hi) + 1))
        else:
            values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers like '4', '1,2,3' or '1..8', got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError(f"empty integer list {text!r}")
    return values


def parse_mesh_size(text: str) -> tuple:
    try:
        nx, ny = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"mesh size must look like '4x4', got {text!r}") from None
    if nx < 1 or ny < 1:
        raise argparse.ArgumentTypeError(f"mesh size must be positive, got {text!r}")
    return nx, ny


def _add_domain(sub, *, required: bool = True):
    group = sub.add_mutually_exclusive_group(required=required)
    group.add_argument("--in", dest="infile", help="polygon text file")
    group.add_argument("--shape", choices=sorted(REFERENCE_SHAPES), help="reference shape")


def _add_space(sub, degree_list: bool = False, default_degree: Optional[int] = None):
    sub.add_argument("--space", choices=SPACES, default="P")
    if degree_list:
        sub.add_argument("--degree", type=parse_int_list, required=True)
    else:
        sub.add_argument("--degree", type=int, required=default_degree is None, default=default_degree)


def _add_candidates(sub, flag: str = "--candidates"):
    sub.add_argument(flag, dest="candidates", choices=CANDIDATE_KINDS, default="fill")
    sub.add_argument("--spacing", type=float, help="lattice spacing in physical units")
    sub.add_argument("--grid-size", type=int, help="points per axis for chebyshev candidates")
    sub.add_argument("--oversample", type=float)
    sub.add_argument("--relax-iters", "--iters", dest="relax_iters", type=int)
    sub.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shull", description="Spectral hull bases, Fekete points and DLS/DG solvers.")
    parser.add_argument("--config", help="JSON file with run defaults")
    parser.add_argument("--threads", type=int, help="worker threads (default: SHULL_THREADS or all cores)")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--version", action="store_true", help="print the version and exit")
    subs = parser.add_subparsers(dest="command", parser_class=_Parser)

    sub = subs.add_parser("partition", help="Hertel-Mehlhorn convex partition")
    _add_domain(sub)
    sub.add_argument("--start", type=int, default=1, help="1-based start vertex")
    sub.add_argument("--out", required=True)

    sub = subs.add_parser("candidates", help="candidate point set")
    _add_domain(sub)
    _add_space(sub, default_degree=4)
    _add_candidates(sub, "--method")
    sub.add_argument("--out", required=True)

    sub = subs.add_parser("moments", help="monomial moments by boundary reduction")
    _add_domain(sub)
    _add_space(sub)
    sub.add_argument("--out", required=True)

    sub = subs.add_parser("quad", help="polygon quadrature rule")
    _add_domain(sub)
    sub.add_argument("--degree", type=int, required=True)
    sub.add_argument("--out", required=True)

    sub = subs.add_parser("fekete", help="approximate Fekete points and weights")
    _add_domain(sub)
    _add_space(sub)
    _add_candidates(sub)
    sub.add_argument("--method", choices=METHODS, default="qr")
    sub.add_argument("--preconditioner", choices=PRECONDITIONERS, default="svd")
    sub.add_argument("--out", required=True)

    sub = subs.add_parser("basis", help="basis table from a Fekete CSV")
    _add_domain(sub)
    _add_space(sub)
    sub.add_argument("--fekete", required=True, help="CSV with x,y columns")
    sub.add_argument("--route", choices=ROUTES, default="direct")
    sub.add_argument("--out", required=True)

    sub = subs.add_parser("tabulate", help="master-hull basis table")
    sub.add_argument("--sides", type=parse_int_list, required=True)
    _add_space(sub, degree_list=True)
    sub.add_argument("--route", choices=ROUTES, default="direct")
    sub.add_argument("--oversample", type=float)
    sub.add_argument("--out", required=True)

    sub = subs.add_parser("lebesgue", help="Lebesgue bound and estimate of a tabulated basis")
    sub.add_argument("--basis", required=True)
    sub.add_argument("--samples", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out")

    sub = subs.add_parser("interp", help="interpolation error versus degree")
    _add_domain(sub)
    _add_space(sub, degree_list=True)
    sub.add_argument("--func", choices=sorted(BENCHMARK_FUNCTIONS), default="cos3pi")
    sub.add_argument("--oversample", type=float)
    sub.add_argument("--out", required=True)

    sub = subs.add_parser("compare", help="SVD versus QR preconditioning report")
    _add_domain(sub)
    _add_space(sub, degree_list=True)
    _add_candidates(sub)
    sub.add_argument("--func", choices=sorted(BENCHMARK_FUNCTIONS), default="cos3pi")
    sub.add_argument("--method", choices=METHODS, default="qr")
    sub.add_argument("--out", required=True)

    sub = subs.add_parser("solve", help="acoustics benchmark on a structured mesh")
    sub.add_argument("--kind", choices=KINDS, default="dls")
    sub.add_argument("--family", choices=FAMILIES, default="hull-Q")
    sub.add_argument("--degree", type=int, required=True)
    sub.add_argument("--mesh", type=parse_mesh_size, default=(4, 4))
    sub.add_argument("--alpha", type=float)
    sub.add_argument("--dt", type=float)
    sub.add_argument("--steps", type=int, default=10, help="RK4 steps for --kind dg")
    sub.add_argument("--unknowns", choices=UNKNOWNS, default="nodal")
    sub.add_argument("--out", required=True)

    sub = subs.add_parser("study", help="error-versus-DOF convergence study")
    sub.add_argument("--kind", choices=KINDS, default="dls")
    sub.add_argument("--families", default=",".join(FAMILIES))
    sub.add_argument("--p", dest="p_list", type=parse_int_list, default=[1, 2, 3, 4])
    sub.add_argument("--mesh", type=parse_mesh_size, default=(4, 4))
    sub.add_argument("--alpha", type=float)
    sub.add_argument("--dt", type=float)
    sub.add_argument("--steps", type=int, default=10)
    sub.add_argument("--out", required=True)
    return parser


def _pick(value, default):
    return default if value is None else value


def _polygon(args) -> Polygon:
    if args.infile:
        return read_polygon(args.infile)
    return reference_shape(args.shape)


def _candidates(args, poly: Polygon, spec: MonomialSpec, defaults: RunDefaults, scale: float = 1.0) -> PointSet:
    oversample = _pick(args.oversample, defaults.oversample)
    count = candidate_count_for(spec, oversample)
    if args.candidates == "random":
        cands = random_points(poly, count, _pick(args.seed, defaults.seed))
    elif args.candidates == "chebyshev":
        n = args.grid_size or math.ceil(math.sqrt(count))
        grid = chebyshev_grid(n, bounding_box(poly))
        cands = PointSet(grid[points_in_polygon(poly, grid)], poly)
    elif args.spacing is not None:
        cands = fill_pattern(poly, args.spacing * scale)
    else:
        cands = fill_to_count(poly, count)
    default_iters = defaults.relax_iters if args.candidates == "grav" else 0
    iters = _pick(args.relax_iters, default_iters)
    if iters:
        cands = gravitational_relax(poly, cands, iters)
    return cands


def cmd_partition(args, defaults: RunDefaults) -> int:
    poly = _polygon(args)
    if not 1 <= args.start <= len(poly):
        raise UsageError(f"--start must lie in 1..{len(poly)}, got {args.start}")
    partition = hertel_mehlhorn(poly, args.start - 1)
    write_pieces(args.out, partition.pieces)
    print(f"{len(partition.pieces)} convex pieces")
    return EXIT_OK


def cmd_candidates(args, defaults: RunDefaults) -> int:
    poly = _polygon(args)
    norm, amap = normalize_hull(poly)
    cands = _candidates(args, norm, MonomialSpec(args.space, args.degree), defaults, amap.scale)
    write_csv(args.out, ("x", "y"), amap.inverse(cands.points))
    print(f"{len(cands)} candidates")
    return EXIT_OK


def cmd_moments(args, defaults: RunDefaults) -> int:
    spec = MonomialSpec(args.space, args.degree)
    moments = boundary_moments(_polygon(args), spec)
    rows = ((j, ex, ey, m) for j, ((ex, ey), m) in enumerate(zip(spec.exponents, moments.values)))
    write_csv(args.out, ("index", "ex", "ey", "moment"), rows)
    return EXIT_OK


def cmd_quad(args, defaults: RunDefaults) -> int:
    rule = polygon_rule(_polygon(args), args.degree)
    write_csv(args.out, ("x", "y", "w"), np.column_stack([rule.nodes, rule.weights]))
    print(f"{len(rule)} nodes, sum w = {rule.weights.sum():.17g}")
    return EXIT_OK


def cmd_fekete(args, defaults: RunDefaults) -> int:
    poly = _polygon(args)
    norm, amap = normalize_hull(poly)
    spec = MonomialSpec(args.space, args.degree)
    cands = _candidates(args, norm, spec, defaults, amap.scale)
    fek = approximate_fekete(norm, spec, cands, args.method, preconditioner=args.preconditioner)
    points, weights = physical_rule(fek, amap)
    write_csv(args.out, ("x", "y", "w"), np.column_stack([points, weights]))
    print(f"{fek.N} points, sum w = {weights.sum():.17g}, sum |w| = {np.abs(weights).sum():.17g}")
    return EXIT_OK


def cmd_basis(args, defaults: RunDefaults) -> int:
    poly = _polygon(args)
    norm, amap = normalize_hull(poly)
    columns = read_csv(args.fekete, ("x", "y"))
    nodes = amap.forward(np.column_stack([columns["x"], columns["y"]]))
    fek = fekete_from_nodes(norm, MonomialSpec(args.space, args.degree), nodes)
    b = build_basis(fek, args.route)
    write_table(args.out, [record_from_basis(b, amap)])
    print(f"basis N = {b.N}, Lebesgue bound {lebesgue_bound(b):.6g}")
    return EXIT_OK


def cmd_tabulate(args, defaults: RunDefaults) -> int:
    oversample = _pick(args.oversample, defaults.oversample)
    records = [
        build_master_record(sides, args.space, p, args.route, oversample=oversample)
        for sides in args.sides
        for p in args.degree
    ]
    write_table(args.out, records)
    print(f"{len(records)} records")
    return EXIT_OK


def cmd_lebesgue(args, defaults: RunDefaults) -> int:
    b, _ = load_basis(args.basis)
    samples = random_points(b.poly, _pick(args.samples, defaults.lebesgue_samples), _pick(args.seed, defaults.seed))
    row = (b.N, lebesgue_bound(b), lebesgue_estimate(b, samples), interpolation_operator_norm(b))
    if args.out:
        write_csv(args.out, ("N", "bound", "estimate", "l2_norm"), [row])
    print(f"N = {row[0]}, bound = {row[1]:.6g}, estimate = {row[2]:.6g}, L2 norm = {row[3]:.6g}")
    return EXIT_OK


def cmd_interp(args, defaults: RunDefaults) -> int:
    poly = _polygon(args)
    norm, amap = normalize_hull(poly)
    func = BENCHMARK_FUNCTIONS[args.func]
    oversample = _pick(args.oversample, defaults.oversample)
    rows = []
    for p in args.degree:
        spec = MonomialSpec(args.space, p)
        fek = approximate_fekete(norm, spec, fill_to_count(norm, candidate_count_for(spec, oversample)))
        b = build_basis(fek)
        rows.append((p, b.N, interpolation_error(b, func, amap), lebesgue_bound(b)))
    write_csv(args.out, ("p", "N", "l2err", "lebesgue_bound"), rows)
    return EXIT_OK


def cmd_compare(args, defaults: RunDefaults) -> int:
    poly = _polygon(args)
    norm, amap = normalize_hull(poly)
    spec = MonomialSpec(args.space, max(args.degree))
    cands = _candidates(args, norm, spec, defaults, amap.scale)
    report = compare_svd_qr(
        norm, args.space, args.degree, cands, func=BENCHMARK_FUNCTIONS[args.func], amap=amap, method=args.method,
    )
    header = ("p", "preconditioner", "lebesgue", "sum_abs_w", "sum_w", "l2err", "negative_weights")
    write_csv(args.out, header, (
        (r.p, r.preconditioner, r.lebesgue, r.sum_abs_weights, r.sum_weights, r.interp_error, r.negative_weights)
        for r in report
    ))
    return EXIT_OK


def cmd_solve(args, defaults: RunDefaults) -> int:
    model = AcousticsModel()
    nx, ny = args.mesh
    mesh = build_mesh(
        benchmark_polygons(args.family, nx, ny), args.family, args.degree,
        oversample=defaults.oversample, threads=defaults.threads,
    )
    if args.kind == "dls":
        dt = _pick(args.dt, defaults.dt)
        alpha = _pick(args.alpha, defaults.alpha)
        system = assemble_dls(mesh, model, dt, alpha, unknowns=args.unknowns, threads=defaults.threads)
        values = solve_dls(system, defaults.cg_tol, defaults.cg_maxit).values
        err = l2_error(mesh, values, exact_solution)
    else:
        dt = _pick(args.dt, cfl_time_step(mesh, model))
        wave = plane_wave(model)
        values = advance_rk4(
            build_dg_operator(mesh), interpolate_state(mesh, wave), model, dt, args.steps, dirichlet_exterior(wave),
        )
        err = l2_error(mesh, values, wave, t=dt * args.steps)
    rows = []
    for h, (b, amap, U) in enumerate(zip(mesh.bases, mesh.maps, values)):
        pts = amap.inverse(b.nodes)
        for j in range(b.N):
            rows.append((h, j, pts[j, 0], pts[j, 1], U[0, j], U[1, j], U[2, j]))
    write_csv(args.out, ("hull", "node", "x", "y", "rho", "u", "v"), rows)
    print(f"{args.kind} {args.family} p={args.degree}: DOF {mesh.dof}, L2 error {err:.6e}")
    return EXIT_OK


def cmd_study(args, defaults: RunDefaults) -> int:
    families = [f.strip() for f in args.families.split(",") if f.strip()]
    unknown = [f for f in families if f not in FAMILIES]
    if unknown or not families:
        raise UsageError(f"--families must name some of {', '.join(FAMILIES)}, got {args.families!r}")
    nx, ny = args.mesh
    rows = convergence_study(
        args.kind, families, args.p_list, nx=nx, ny=ny,
        alpha=_pick(args.alpha, defaults.alpha),
        dt=_pick(args.dt, defaults.dt),
        tol=defaults.cg_tol,
        maxit=defaults.cg_maxit,
        oversample=defaults.oversample,
        threads=defaults.threads,
        dg_dt=_pick(args.dt, 1e-3) if args.kind == "dg" else 1e-3,
        dg_steps=args.steps,
    )
    write_csv(args.out, ("kind", "family", "p", "dof", "l2err"), ((r.kind, r.family, r.p, r.dof, r.l2err) for r in rows))
    return EXIT_OK


COMMANDS = {
    "partition": cmd_partition,
    "candidates": cmd_candidates,
    "moments": cmd_moments,
    "quad": cmd_quad,
    "fekete": cmd_fekete,
    "basis": cmd_basis,
    "tabulate": cmd_tabulate,
    "lebesgue": cmd_lebesgue,
    "interp": cmd_interp,
    "compare": cmd_compare,
    "solve": cmd_solve,
    "study": cmd_study,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.version:
            print(f"shull {APP_VERSION}")
            return EXIT_OK
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        if args.log_level:
            set_level(args.log_level)
        defaults = load_run_defaults(args.config)
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError(f"--threads must be positive, got {args.threads}")
            defaults.threads = args.threads
    except (UsageError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    set_run_context(args.command)
    log.info("Running '%s' (shull %s)", args.command, APP_VERSION)
    try:
        with timed(log, args.command), numpy_warnings_logged(log):
            return COMMANDS[args.command](args, defaults)
    except (UsageError, PolygonFormatError, TableError, ConfigError, OSError) as exc:
        log.error("'%s' failed: %s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, np.linalg.LinAlgError) as exc:
        log.error("'%s' failed: %s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
