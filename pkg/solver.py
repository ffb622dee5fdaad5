from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import norm as sparse_norm

from basis import eval_nodal, eval_nodal_gradient
from candidates import DEFAULT_OVERSAMPLE
from config_utils import thread_count
from geometry import boundary_distance
from logger_utils import get_logger
from mesh import FAMILIES, HullMesh, MeshEdge, benchmark_polygons, build_mesh
from quadrature import MAX_AREA_DEGREE, MAX_EDGE_DEGREE, edge_rule, polygon_rule


log = get_logger(__name__)

UNKNOWNS = ("nodal", "modal")
KINDS = ("dls", "dg")
INTERFACE_RTOL = 1e-10


class SolverError(ValueError):
    """Raised when a discretization cannot be assembled, solved or advanced."""


@dataclass(frozen=True)
class AcousticsModel:
    """Linearized acoustics about a quiescent state; unknowns (rho, u, v)."""

    rho0: float = 1.0
    c0: float = 1.0

    def __post_init__(self):
        for name in ("rho0", "c0"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
                raise SolverError(f"'{name}' must be a positive number, got {value!r}")

    @property
    def A1(self) -> np.ndarray:
        return np.array([[0.0, self.rho0, 0.0], [self.c0 ** 2 / self.rho0, 0.0, 0.0], [0.0, 0.0, 0.0]])

    @property
    def A2(self) -> np.ndarray:
        return np.array([[0.0, 0.0, self.rho0], [0.0, 0.0, 0.0], [self.c0 ** 2 / self.rho0, 0.0, 0.0]])

    def normal_jacobian(self, n) -> np.ndarray:
        return n[0] * self.A1 + n[1] * self.A2

    def abs_normal_jacobian(self, n) -> np.ndarray:
        lam, R = np.linalg.eig(self.normal_jacobian(n))
        return np.real(R @ np.diag(np.abs(lam)) @ np.linalg.inv(R))

    def energy_weights(self) -> np.ndarray:
        return np.array([self.c0 ** 2 / self.rho0, self.rho0, self.rho0])


def exact_solution(x, y, t=0.0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.array([np.cos(np.pi * x) * np.cos(np.pi * y), x ** 2 + y ** 2, x - y])


def exact_gradient(x, y) -> tuple:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    one = np.ones_like(x)
    dx = np.array([-np.pi * np.sin(np.pi * x) * np.cos(np.pi * y), 2 * x, one])
    dy = np.array([-np.pi * np.cos(np.pi * x) * np.sin(np.pi * y), 2 * y, -one])
    return dx, dy


def manufactured_source(model: AcousticsModel, dt: float) -> Callable:
    """f = U/dt + A1 dU/dx + A2 dU/dy for the steady manufactured solution."""
    if not dt > 0:
        raise SolverError(f"Time step must be positive, got {dt}")
    A1, A2 = model.A1, model.A2

    def source(x, y):
        dx, dy = exact_gradient(x, y)
        return (
            exact_solution(x, y) / dt
            + np.einsum("ij,j...->i...", A1, dx)
            + np.einsum("ij,j...->i...", A2, dy)
        )

    return source


def plane_wave(model: AcousticsModel, direction=(1.0, 1.0)) -> Callable:
    n = np.asarray(direction, dtype=float)
    length = np.linalg.norm(n)
    if not length > 0:
        raise SolverError("Plane-wave direction must be non-zero")
    n = n / length

    def wave(x, y, t=0.0):
        s = np.sin(np.pi * (n[0] * np.asarray(x, dtype=float) + n[1] * np.asarray(y, dtype=float) - model.c0 * t))
        return np.array([model.rho0 / model.c0 * s, n[0] * s, n[1] * s])

    return wave


def dirichlet_exterior(exact: Callable) -> Callable:
    def exterior(x, y, UL, n, t):
        return np.asarray(exact(x, y, t), dtype=float)

    return exterior


def wall_exterior(x, y, UL, n, t):
    UR = np.array(UL, dtype=float)
    un = n[0] * UL[1] + n[1] * UL[2]
    UR[1] -= 2 * un * n[0]
    UR[2] -= 2 * un * n[1]
    return UR


def transmissive_exterior(x, y, UL, n, t):
    return np.array(UL, dtype=float)


@dataclass(frozen=True, eq=False)
class HullTables:
    phi: np.ndarray
    gx: np.ndarray
    gy: np.ndarray
    w: np.ndarray
    points: np.ndarray


@dataclass(frozen=True, eq=False)
class EdgeTables:
    edge: MeshEdge
    points: np.ndarray
    w: np.ndarray
    normal: np.ndarray
    phi_left: np.ndarray
    phi_right: Optional[np.ndarray]


def _area_degree(maxdeg: int) -> int:
    if 2 * maxdeg > MAX_AREA_DEGREE:
        log.debug("Interior quadrature degree %d capped at %d", 2 * maxdeg, MAX_AREA_DEGREE)
    return min(MAX_AREA_DEGREE, 2 * maxdeg)


def hull_tables(mesh: HullMesh, i: int, transform: Optional[np.ndarray] = None) -> HullTables:
    b, amap = mesh.bases[i], mesh.maps[i]
    rule = polygon_rule(mesh.normalized[i], _area_degree(b.spec.maxdeg))
    phi = eval_nodal(b, rule.nodes)
    gx, gy = eval_nodal_gradient(b, rule.nodes)
    gx, gy = gx * amap.scale, gy * amap.scale
    if transform is not None:
        phi, gx, gy = phi @ transform, gx @ transform, gy @ transform
    return HullTables(
        phi=phi, gx=gx, gy=gy, w=rule.weights / amap.scale ** 2, points=amap.inverse(rule.nodes)
    )


def _trace(mesh: HullMesh, h: int, pts: np.ndarray, transform) -> np.ndarray:
    amap = mesh.maps[h]
    local = amap.forward(pts)
    gap = float(boundary_distance(mesh.normalized[h], local).max())
    if gap > INTERFACE_RTOL * mesh.normalized[h].diameter:
        raise SolverError(f"Edge quadrature does not lie on the boundary of hull {h} (distance {gap:.3g})")
    phi = eval_nodal(mesh.bases[h], local)
    return phi if transform is None else phi @ transform


def edge_tables(mesh: HullMesh, edge: MeshEdge, transforms=None) -> EdgeTables:
    maxdeg = mesh.bases[edge.left].spec.maxdeg
    if edge.right is not None:
        maxdeg = max(maxdeg, mesh.bases[edge.right].spec.maxdeg)
    if 2 * maxdeg + 1 > MAX_EDGE_DEGREE:
        log.debug("Edge quadrature degree %d capped at %d", 2 * maxdeg + 1, MAX_EDGE_DEGREE)
    rule = edge_rule(edge.a, edge.b, min(MAX_EDGE_DEGREE, 2 * maxdeg + 1))
    pick = (lambda h: None) if transforms is None else (lambda h: transforms[h])
    return EdgeTables(
        edge=edge,
        points=rule.nodes,
        w=rule.weights,
        normal=edge.normal(),
        phi_left=_trace(mesh, edge.left, rule.nodes, pick(edge.left)),
        phi_right=None if edge.right is None else _trace(mesh, edge.right, rule.nodes, pick(edge.right)),
    )


def _edge_mass(phi_a: np.ndarray, w: np.ndarray, phi_b: np.ndarray) -> np.ndarray:
    return np.kron(np.eye(3), (phi_a * w[:, None]).T @ phi_b)


@dataclass(eq=False)
class DlsSystem:
    """Block-sparse normal equations; unknowns per hull are component-major (rho, u, v)."""

    diag: list
    offdiag: dict
    rhs: list
    alpha: float
    D: float
    unknowns: str = "nodal"
    transforms: Optional[list] = None
    sizes: list = field(default_factory=list)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([3 * n for n in self.sizes])])

    @property
    def n_unknowns(self) -> int:
        return int(self.offsets[-1])

    def split(self, x: np.ndarray) -> list:
        off = self.offsets
        return [x[off[i]:off[i + 1]] for i in range(len(self.sizes))]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        parts = self.split(np.asarray(x, dtype=float))
        out = [block @ part for block, part in zip(self.diag, parts)]
        for (i, j), block in self.offdiag.items():
            out[i] = out[i] + block @ parts[j]
            out[j] = out[j] + block.T @ parts[i]
        return np.concatenate(out)

    def to_sparse(self) -> sparse.csr_matrix:
        n = len(self.diag)
        blocks = [[None] * n for _ in range(n)]
        for i, block in enumerate(self.diag):
            blocks[i][i] = block
        for (i, j), block in self.offdiag.items():
            blocks[i][j] = block
            blocks[j][i] = block.T
        return sparse.bmat(blocks, format="csr")

    def symmetry_defect(self) -> float:
        A = self.to_sparse()
        return float(sparse_norm(A - A.T) / sparse_norm(A))


def assemble_dls(
    mesh: HullMesh,
    model: AcousticsModel,
    dt: float,
    alpha: float = 1.0,
    *,
    unknowns: str = "nodal",
    exact: Callable = exact_solution,
    threads: Optional[int] = None,
) -> DlsSystem:
    if unknowns not in UNKNOWNS:
        raise SolverError(f"Unknown DLS unknowns '{unknowns}'; choose nodal or modal")
    if isinstance(alpha, bool) or not alpha >= 0:
        raise SolverError(f"Jump penalty must be non-negative, got {alpha!r}")
    source = manufactured_source(model, dt)
    D = 1.0 / dt
    A1, A2 = model.A1, model.A2
    transforms = [b.U for b in mesh.bases] if unknowns == "modal" else None

    def interior(i):
        t = hull_tables(mesh, i, None if transforms is None else transforms[i])
        L = np.kron(D * np.eye(3), t.phi) + np.kron(A1, t.gx) + np.kron(A2, t.gy)
        WL = np.tile(t.w, 3)[:, None] * L
        F = source(t.points[:, 0], t.points[:, 1])
        return L.T @ WL, WL.T @ F.ravel()

    with ThreadPoolExecutor(max_workers=min(thread_count(threads), len(mesh))) as pool:
        blocks = list(pool.map(interior, range(len(mesh))))
    diag = [block for block, _ in blocks]
    rhs = [vec for _, vec in blocks]

    offdiag = {}
    for edge in mesh.edges:
        et = edge_tables(mesh, edge, transforms)
        L = edge.left
        diag[L] += alpha * _edge_mass(et.phi_left, et.w, et.phi_left)
        if edge.is_boundary:
            g = np.asarray(exact(et.points[:, 0], et.points[:, 1]), dtype=float)
            rhs[L] += alpha * ((et.phi_left * et.w[:, None]).T @ g.T).T.ravel()
            continue
        R = edge.right
        diag[R] += alpha * _edge_mass(et.phi_right, et.w, et.phi_right)
        if alpha == 0:
            continue
        if L < R:
            key, block = (L, R), -alpha * _edge_mass(et.phi_left, et.w, et.phi_right)
        else:
            key, block = (R, L), -alpha * _edge_mass(et.phi_right, et.w, et.phi_left)
        offdiag[key] = offdiag[key] + block if key in offdiag else block

    system = DlsSystem(
        diag=diag,
        offdiag=offdiag,
        rhs=rhs,
        alpha=float(alpha),
        D=D,
        unknowns=unknowns,
        transforms=transforms,
        sizes=[b.N for b in mesh.bases],
    )
    log.info(
        "Assembled DLS system (%s): %d hulls, %d unknowns, %d coupling blocks, dt=%g, alpha=%g",
        unknowns, len(mesh), system.n_unknowns, len(offdiag), dt, alpha,
    )
    return system


@dataclass(frozen=True, eq=False)
class DlsSolution:
    values: list
    coefficients: list
    iterations: int
    residual: float


def _block_jacobi(system: DlsSystem) -> list:
    factors = []
    for i, block in enumerate(system.diag):
        try:
            factors.append(linalg.cho_factor(block))
        except linalg.LinAlgError as exc:
            raise SolverError(f"Diagonal block {i} is not positive definite: {exc}") from exc
    return factors


def solve_dls(system: DlsSystem, tol: float = 1e-12, maxit: Optional[int] = None) -> DlsSolution:
    """Preconditioned conjugate gradients with per-hull block-Jacobi preconditioning."""
    factors = _block_jacobi(system)

    def precondition(r):
        return np.concatenate([linalg.cho_solve(f, part) for f, part in zip(factors, system.split(r))])

    b = np.concatenate(system.rhs)
    n = len(b)
    maxit = 10 * n if maxit is None else maxit
    bnorm = float(np.linalg.norm(b))
    x = np.zeros(n)
    r = b.copy()
    rnorm = bnorm
    iterations = 0
    if bnorm > 0:
        z = precondition(r)
        p = z.copy()
        rz = r @ z
        while True:
            if iterations >= maxit:
                raise SolverError(
                    f"PCG did not converge in {maxit} iterations (relative residual {rnorm / bnorm:.3e})"
                )
            Ap = system.matvec(p)
            pAp = p @ Ap
            if not np.isfinite(pAp) or pAp <= 0:
                raise SolverError(f"PCG breakdown at iteration {iterations}: p^T A p = {pAp:.3e}")
            step = rz / pAp
            x += step * p
            r -= step * Ap
            iterations += 1
            rnorm = float(np.linalg.norm(r))
            log.debug("PCG iteration %d: relative residual %.3e", iterations, rnorm / bnorm)
            if rnorm <= tol * bnorm:
                break
            z = precondition(r)
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new

    coefficients = [part.reshape(3, -1) for part in system.split(x)]
    if system.transforms is None:
        values = coefficients
    else:
        values = [w @ T.T for w, T in zip(coefficients, system.transforms)]
    relative = rnorm / bnorm if bnorm > 0 else 0.0
    log.info("PCG converged in %d iterations (relative residual %.3e)", iterations, relative)
    return DlsSolution(values=values, coefficients=coefficients, iterations=iterations, residual=relative)


def l2_error(mesh: HullMesh, values: Sequence[np.ndarray], exact: Callable, t: float = 0.0) -> float:
    total = 0.0
    for i in range(len(mesh)):
        tab = hull_tables(mesh, i)
        approx = np.asarray(values[i]) @ tab.phi.T
        err = approx - np.asarray(exact(tab.points[:, 0], tab.points[:, 1], t), dtype=float)
        total += float(np.sum((err ** 2) @ tab.w))
    return float(np.sqrt(total))


def interpolate_state(mesh: HullMesh, func: Callable, t: float = 0.0) -> list:
    state = []
    for b, amap in zip(mesh.bases, mesh.maps):
        pts = amap.inverse(b.nodes)
        state.append(np.asarray(func(pts[:, 0], pts[:, 1], t), dtype=float).reshape(3, b.N))
    return state


@dataclass(frozen=True, eq=False)
class DgOperator:
    mesh: HullMesh
    hulls: list
    edges: list
    mass: list


def build_dg_operator(mesh: HullMesh) -> DgOperator:
    hulls = [hull_tables(mesh, i) for i in range(len(mesh))]
    mass = []
    for i, tab in enumerate(hulls):
        try:
            mass.append(linalg.cho_factor((tab.phi * tab.w[:, None]).T @ tab.phi))
        except linalg.LinAlgError as exc:
            raise SolverError(f"Mass matrix of hull {i} is singular: {exc}") from exc
    edges = [edge_tables(mesh, e) for e in mesh.edges]
    log.debug("Built DG operator: %d hulls, %d edges", len(hulls), len(edges))
    return DgOperator(mesh=mesh, hulls=hulls, edges=edges, mass=mass)


def _operator(target) -> DgOperator:
    return target if isinstance(target, DgOperator) else build_dg_operator(target)


def dg_residual(
    op,
    state: Sequence[np.ndarray],
    model: AcousticsModel,
    exterior: Optional[Callable] = None,
    t: float = 0.0,
    *,
    return_fluxes: bool = False,
):
    """Weak-form right-hand side per hull with upwind interface fluxes.

    With return_fluxes the outward boundary flux integral of every hull is
    returned too; summing a residual over its nodes equals minus that flux.
    """
    op = _operator(op)
    exterior = transmissive_exterior if exterior is None else exterior
    A1, A2 = model.A1, model.A2
    residual = []
    for tab, U in zip(op.hulls, state):
        Uq = np.asarray(U) @ tab.phi.T
        residual.append(((A1 @ Uq) * tab.w) @ tab.gx + ((A2 @ Uq) * tab.w) @ tab.gy)
    fluxes = np.zeros((len(op.hulls), 3))
    for et in op.edges:
        edge = et.edge
        UL = np.asarray(state[edge.left]) @ et.phi_left.T
        if edge.is_boundary:
            UR = exterior(et.points[:, 0], et.points[:, 1], UL, et.normal, t)
        else:
            UR = np.asarray(state[edge.right]) @ et.phi_right.T
        An = model.normal_jacobian(et.normal)
        absAn = model.abs_normal_jacobian(et.normal)
        flux = (0.5 * An @ (UL + UR) - 0.5 * absAn @ (UR - UL)) * et.w
        residual[edge.left] = residual[edge.left] - flux @ et.phi_left
        fluxes[edge.left] += flux.sum(axis=1)
        if not edge.is_boundary:
            residual[edge.right] = residual[edge.right] + flux @ et.phi_right
            fluxes[edge.right] -= flux.sum(axis=1)
    if return_fluxes:
        return residual, fluxes
    return residual


def _rate(op: DgOperator, state, model, exterior, t) -> list:
    residual = dg_residual(op, state, model, exterior, t)
    return [linalg.cho_solve(m, r.T).T for m, r in zip(op.mass, residual)]


def advance_rk4(
    op,
    state: Sequence[np.ndarray],
    model: AcousticsModel,
    dt: float,
    steps: int,
    exterior: Optional[Callable] = None,
    t0: float = 0.0,
) -> list:
    if not dt > 0:
        raise SolverError(f"Time step must be positive, got {dt}")
    if steps < 0:
        raise SolverError(f"Step count must be non-negative, got {steps}")
    op = _operator(op)
    current = [np.array(U, dtype=float) for U in state]
    t = t0
    for step in range(1, steps + 1):
        k1 = _rate(op, current, model, exterior, t)
        k2 = _rate(op, [u + 0.5 * dt * k for u, k in zip(current, k1)], model, exterior, t + 0.5 * dt)
        k3 = _rate(op, [u + 0.5 * dt * k for u, k in zip(current, k2)], model, exterior, t + 0.5 * dt)
        k4 = _rate(op, [u + dt * k for u, k in zip(current, k3)], model, exterior, t + dt)
        current = [
            u + dt / 6.0 * (a + 2 * b + 2 * c + d) for u, a, b, c, d in zip(current, k1, k2, k3, k4)
        ]
        t += dt
        if not all(np.all(np.isfinite(u)) for u in current):
            raise SolverError(f"Non-finite state after RK4 step {step}")
    log.debug("Advanced %d RK4 steps of %g", steps, dt)
    return current


def acoustic_energy(op, state: Sequence[np.ndarray], model: AcousticsModel) -> float:
    op = _operator(op)
    weights = model.energy_weights()
    total = 0.0
    for tab, U in zip(op.hulls, state):
        Uq = np.asarray(U) @ tab.phi.T
        total += float(weights @ ((Uq ** 2) @ tab.w))
    return total


def cfl_time_step(mesh: HullMesh, model: AcousticsModel, cfl: float = 0.5) -> float:
    return min(
        cfl * hull.diameter / (model.c0 * (2 * p + 1)) for hull, p in zip(mesh.hulls, mesh.degrees)
    )


def dof_counts(n_elements: int, p: int) -> dict:
    dg = n_elements * (p + 1) * (p + 2) // 2
    return {
        "dg": dg,
        "cg": dg - n_elements * (p + 1) + 1,
        "shull_p": (p + 1) * (p + 2) // 2,
        "shull_q": (p + 1) ** 2,
    }


@dataclass(frozen=True)
class StudyRow:
    kind: str
    family: str
    p: int
    dof: int
    l2err: float
    iterations: int = 0


def convergence_study(
    kind: str,
    families: Sequence[str] = FAMILIES,
    p_list: Sequence[int] = (1, 2, 3, 4),
    *,
    nx: int = 4,
    ny: int = 4,
    model: Optional[AcousticsModel] = None,
    alpha: float = 1.0,
    dt: float = 1e-12,
    tol: float = 1e-12,
    maxit: Optional[int] = None,
    oversample: float = DEFAULT_OVERSAMPLE,
    threads: Optional[int] = None,
    dg_dt: float = 1e-3,
    dg_steps: int = 10,
    direction=(1.0, 1.0),
) -> list:
    """Error against the manufactured (dls) or plane-wave (dg) solution per family and degree."""
    if kind not in KINDS:
        raise SolverError(f"Unknown study kind '{kind}'; choose dls or dg")
    model = AcousticsModel() if model is None else model
    rows = []
    for family in families:
        polygons = benchmark_polygons(family, nx, ny)
        for p in p_list:
            mesh = build_mesh(polygons, family, p, oversample=oversample, threads=threads)
            if kind == "dls":
                solution = solve_dls(assemble_dls(mesh, model, dt, alpha, threads=threads), tol, maxit)
                err = l2_error(mesh, solution.values, exact_solution)
                iterations = solution.iterations
            else:
                wave = plane_wave(model, direction)
                state = advance_rk4(
                    build_dg_operator(mesh), interpolate_state(mesh, wave), model,
                    dg_dt, dg_steps, dirichlet_exterior(wave),
                )
                err = l2_error(mesh, state, wave, t=dg_dt * dg_steps)
                iterations = dg_steps
            rows.append(StudyRow(kind=kind, family=family, p=p, dof=mesh.dof, l2err=err, iterations=iterations))
            log.info("Study %s %s p=%d: DOF %d, L2 error %.3e", kind, family, p, mesh.dof, err)
    return rows
