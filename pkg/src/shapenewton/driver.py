"""Experiment drivers: the SQP iteration, a steepest-descent baseline, and a
mesh-refinement study.

A run is configured by :class:`ExperimentConfig` and produces a
:class:`SqpTrace` whose rows record, per iteration, the interface distance to
the straight solution, the objective, the shape-gradient norm, and the step
actually taken.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import fem, qp, shape
from .errors import ConfigError, StepFailureError
from .mesh import TriMesh, build_template, refine_uniform

log = logging.getLogger(__name__)

# Iteration stops early once the shape gradient is this small in the
# arc-length norm; with self-consistent data the start is already stationary.
GRAD_TOL = 1e-10

# A trial step is rejected when it increases the objective by more than this
# factor; rejection triggers step halving.
ACCEPT_FACTOR = 1.1

_MAX_HALVINGS = 30


@dataclass(frozen=True)
class ExperimentConfig:
    """Problem and solver parameters for one experiment."""

    f1: float = 1000.0
    f2: float = 1.0
    mu: float = 10.0
    n: int = 54
    levels: int = 3
    max_sqp_iters: int = 2
    cg_tol: float = 1e-8
    step_length: float = 1.0
    line_search: bool = True
    baseline_scaling: float = 1e4
    seed: int = 0

    def __post_init__(self):
        if self.f1 == self.f2:
            raise ConfigError("f1 and f2 must differ")
        if self.mu <= 0.0:
            raise ConfigError("mu must be positive")
        if self.n < 2 or self.n % 2 != 0:
            raise ConfigError("n must be an even integer >= 2")
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if self.max_sqp_iters < 0:
            raise ConfigError("max_sqp_iters must be >= 0")
        if self.cg_tol <= 0.0:
            raise ConfigError("cg_tol must be positive")
        if self.step_length <= 0.0:
            raise ConfigError("step_length must be positive")
        if self.baseline_scaling <= 0.0:
            raise ConfigError("baseline_scaling must be positive")


@dataclass(frozen=True)
class TraceRow:
    """State at the start of one iteration plus the step then taken.

    The last row of a trace describes the final iterate; its cg_iterations
    and step_length are zero because no further step is taken.
    """

    level: int
    iteration: int
    dist: float
    objective: float
    grad_norm: float
    cg_iterations: int
    step_length: float


@dataclass(frozen=True)
class SqpTrace:
    """Iteration history of one solver run together with the final mesh."""

    level: int
    rows: tuple[TraceRow, ...]
    mesh: TriMesh

    @property
    def dists(self) -> np.ndarray:
        return np.array([r.dist for r in self.rows])

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.rows])

    @property
    def final(self) -> TraceRow:
        return self.rows[-1]


@dataclass(frozen=True)
class IterationSnapshot:
    """Per-iteration fields handed to observers for inspection or export."""

    mesh: TriMesh
    geometry: shape.InterfaceGeometry
    y: fem.NodalField
    p: fem.NodalField
    gradient: shape.InterfaceField


@dataclass(frozen=True)
class DataOracle:
    """Reference observation held on its own fine mesh.

    sample() interpolates the observation onto another mesh's vertices, so
    every working level sees the same underlying data.
    """

    mesh: TriMesh
    field: fem.NodalField

    def sample(self, target: TriMesh) -> fem.NodalField:
        values = fem.evaluate_field(self.mesh, self.field, target.vertices)
        return fem.NodalField(mesh=target, values=values)


def generate_data(config: ExperimentConfig) -> DataOracle:
    """Solve the state equation on a straight-interface mesh refined two
    levels above the coarse working mesh."""
    m = refine_uniform(refine_uniform(build_template(config.n)))
    y = fem.solve_state(m, config.f1, config.f2)
    if y.values.min() < -1e-9:
        raise StepFailureError("reference observation is not nonnegative")
    return DataOracle(mesh=m, field=y)


def mesh_at_level(config: ExperimentConfig, level: int) -> TriMesh:
    """Straight-interface working mesh; level 1 is the template, each further
    level refines uniformly once."""
    if level < 1:
        raise ConfigError("level must be >= 1")
    m = build_template(config.n)
    for _ in range(level - 1):
        m = refine_uniform(m)
    return m


def initial_mesh(config: ExperimentConfig, level: int) -> TriMesh:
    """Working mesh whose interface follows the reference starting curve."""
    m = mesh_at_level(config, level)
    pts = shape.bspline_initial_interface(m.interface_nodes.shape[0])
    # The template interface is the straight line sampled at the same uniform
    # heights, so the curve offsets are plain x-displacements.
    offsets = pts[:, 0] - m.interface_points[:, 0]
    geometry = shape.compute_geometry(m)
    field = shape.InterfaceField(mesh=m, values=offsets)
    moved, used = shape.retract(m, field, geometry, 1.0)
    if used != 1.0:
        raise StepFailureError("placing the starting interface required step halving")
    return moved


def _objective_on(mesh: TriMesh, data: DataOracle, config: ExperimentConfig) -> float:
    y = fem.solve_state(mesh, config.f1, config.f2)
    ybar = data.sample(mesh)
    return shape.objective(mesh, y, ybar, shape.compute_geometry(mesh), config.mu)


def _take_step(mesh: TriMesh, w: shape.InterfaceField, geometry: shape.InterfaceGeometry,
               alphas: list[float], current_objective: float,
               data: DataOracle, config: ExperimentConfig) -> tuple[TriMesh, float]:
    """Try the candidate step lengths, keep the best objective; fall back to
    halving below the smallest candidate when all trials fail or increase the
    objective beyond the acceptance factor."""
    best = None
    for alpha in alphas:
        try:
            trial, used = shape.retract(mesh, w, geometry, alpha)
        except StepFailureError:
            continue
        value = _objective_on(trial, data, config)
        if best is None or value < best[2]:
            best = (trial, used, value)
    if best is not None and best[2] <= ACCEPT_FACTOR * current_objective:
        return best[0], best[1]

    alpha = min(alphas)
    for _ in range(_MAX_HALVINGS):
        alpha *= 0.5
        try:
            trial, used = shape.retract(mesh, w, geometry, alpha)
        except StepFailureError:
            continue
        value = _objective_on(trial, data, config)
        if value <= ACCEPT_FACTOR * current_objective:
            return trial, used
    raise StepFailureError("no acceptable step length found")


def _iterate(config: ExperimentConfig, data: DataOracle, level: int,
             step_fn, observer=None, start: TriMesh | None = None) -> SqpTrace:
    """Shared iteration loop; step_fn produces (w, cg_iterations, alphas)
    from the workspace and the gradient."""
    cur = initial_mesh(config, level) if start is None else start
    rows = []
    for it in range(config.max_sqp_iters + 1):
        ybar = data.sample(cur)
        ws = qp.QpWorkspace(cur, ybar, config.f1, config.f2, config.mu,
                            cg_tol=config.cg_tol)
        g = shape.shape_gradient(cur, ws.geometry, ws.p, config.f1, config.f2,
                                 config.mu)
        grad_norm = shape.s_norm(ws.geometry, g.values)
        value = shape.objective(cur, ws.y, ybar, ws.geometry, config.mu, ws.mass)
        dist = shape.dist_to_solution(cur)
        snapshot = IterationSnapshot(cur, ws.geometry, ws.y, ws.p, g)

        if it == config.max_sqp_iters or grad_norm <= GRAD_TOL:
            row = TraceRow(level, it, dist, value, grad_norm, 0, 0.0)
            rows.append(row)
            if observer is not None:
                observer(row, snapshot)
            log.info("level %d it %d: dist %.6g J %.6g |g| %.3g (stop)",
                     level, it, dist, value, grad_norm)
            break

        w, cg_iters, alphas = step_fn(ws, g)
        try:
            cur, alpha_used = _take_step(cur, w, ws.geometry, alphas, value,
                                         data, config)
        except StepFailureError as exc:
            raise StepFailureError(f"iteration {it}: {exc}") from exc
        row = TraceRow(level, it, dist, value, grad_norm, cg_iters, alpha_used)
        rows.append(row)
        if observer is not None:
            observer(row, snapshot)
        log.info("level %d it %d: dist %.6g J %.6g |g| %.3g cg %d alpha %g",
                 level, it, dist, value, grad_norm, cg_iters, alpha_used)
    return SqpTrace(level=level, rows=tuple(rows), mesh=cur)


def sqp_solve(config: ExperimentConfig, data: DataOracle | None = None,
              level: int = 1, observer=None,
              start: TriMesh | None = None) -> SqpTrace:
    """Run the SQP iteration on one refinement level.

    Each iteration solves the quadratic subproblem by conjugate gradients and
    steps along the resulting normal displacement.  With line_search enabled
    the step length is chosen among {1, 1.25, 1.5} times the configured
    length by objective value; otherwise the configured length is used
    directly.  Either way a rejected or inverting step is halved.  The run
    starts from the reference curve unless an explicit start mesh is given.
    """
    if data is None:
        data = generate_data(config)

    if config.line_search:
        alphas = [config.step_length, 1.25 * config.step_length,
                  1.5 * config.step_length]
    else:
        alphas = [config.step_length]

    def step_fn(ws, g):
        result = qp.solve_qp_cg(ws)
        return result.w, result.iterations, alphas

    return _iterate(config, data, level, step_fn, observer, start)


def steepest_descent_solve(config: ExperimentConfig, data: DataOracle | None = None,
                           level: int = 1, observer=None,
                           start: TriMesh | None = None) -> SqpTrace:
    """Run scaled steepest descent on one refinement level.

    The step is the negative shape gradient normalized by the squared source
    jump and multiplied by baseline_scaling; acceptance and halving match the
    SQP driver.
    """
    if data is None:
        data = generate_data(config)
    jump_sq = (config.f1 - config.f2) ** 2
    alphas = [config.step_length]

    def step_fn(ws, g):
        w = shape.InterfaceField(
            mesh=ws.mesh,
            values=config.baseline_scaling * (-g.values) / jump_sq,
            role="descent",
        )
        return w, 0, alphas

    return _iterate(config, data, level, step_fn, observer, start)


def convergence_study(config: ExperimentConfig, observer=None) -> list[SqpTrace]:
    """Run the SQP iteration on every refinement level against one shared
    data oracle and return the traces, coarsest first."""
    data = generate_data(config)
    traces = []
    for level in range(1, config.levels + 1):
        traces.append(sqp_solve(config, data, level, observer))
    return traces
