"""Particle solver for the coupled two-driver forward-backward system.

The scheme is a damped Picard iteration of a fully-frozen decoupled step,
lifted to the target system along a continuation ladder in alpha.  Backward
conditional expectations are least-squares regressions on node features built
from y_k and the remaining driver tail B_T - B_{t_k}; that feature set is the
discrete stand-in for the mixed information structure of the problem.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .measure import EmpiricalLaw
from .model import (
    CoefficientSet,
    Dimensions,
    EnsembleState,
    Forcing,
    HomotopyProblem,
    Quad,
    ResidualTriple,
    quad_law,
    residual,
)
from .paths import BrownianPair, TimeGrid

BASES = ("constant", "affine_y", "poly2_y_plus_Btail")


class SolverError(RuntimeError):
    """Solver failure; carries whatever partial report exists."""

    def __init__(self, message: str, report: "SolveReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class RegressionConfig:
    """Least-squares conditional-expectation proxy.

    ``basis`` picks the node features: {1}, {1, y}, or {1, y, y x y, Btail}.
    Features at node k use only y_k and B_T - B_{t_k}.
    """

    basis: str = "affine_y"
    ridge: float = 1e-8

    def __post_init__(self) -> None:
        if self.basis not in BASES:
            raise ValueError(f"unknown basis {self.basis!r}")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")

    def features(self, y_k: np.ndarray, btail_k: np.ndarray) -> np.ndarray:
        m = y_k.shape[0]
        cols = [np.ones((m, 1))]
        if self.basis in ("affine_y", "poly2_y_plus_Btail"):
            cols.append(y_k)
        if self.basis == "poly2_y_plus_Btail":
            d = y_k.shape[1]
            for i in range(d):
                for j in range(i, d):
                    cols.append((y_k[:, i] * y_k[:, j])[:, None])
            cols.append(btail_k)
        return np.concatenate(cols, axis=1)


def _fit(features: np.ndarray, targets: np.ndarray, ridge: float, node: int) -> np.ndarray:
    """Fitted values of a ridge regression; escalates the ridge before failing."""
    gram = features.T @ features
    rhs = features.T @ targets
    lam = max(ridge, 0.0)
    eye = np.eye(gram.shape[0])
    for _ in range(4):
        try:
            beta = np.linalg.solve(gram + lam * eye, rhs)
        except np.linalg.LinAlgError:
            beta = None
        if beta is not None and np.all(np.isfinite(beta)):
            return features @ beta
        lam = max(lam * 10.0, 1e-10)
    raise SolverError(f"regression matrix singular at node {node}")


@dataclass
class LadderRung:
    alpha: float
    iterations: int
    converged: bool
    final_distance: float
    median_ratio: float
    residual_history: list[float] = field(default_factory=list)


@dataclass
class SolveReport:
    """Diagnostics of one Picard run or one full continuation ladder."""

    final_state: EnsembleState
    picard_residuals: list[float] = field(default_factory=list)
    contraction_ratios: list[float] = field(default_factory=list)
    alpha_ladder: list[LadderRung] = field(default_factory=list)
    residuals: ResidualTriple | None = None
    wallclock: float = 0.0
    converged: bool = False
    iterations: int = 0

    def tail_median_ratio(self, burn_in: int = 2) -> float:
        tail = self.contraction_ratios[burn_in:]
        if not tail:
            tail = self.contraction_ratios
        return float(np.median(tail)) if tail else float("nan")


def d_metric(a: EnsembleState, b: EnsembleState) -> float:
    """Contraction metric: mean over particles of
    sum_k |dv_k|^2 dt + |dy_N|^2 (left-node quadrature)."""
    dt = a.grid.dt
    n = a.grid.steps
    dy = a.y - b.y
    d_big_y = a.Y - b.Y
    dz = a.z - b.z
    d_big_z = a.Z - b.Z
    per_node = (
        np.sum(dy**2, axis=2)
        + np.sum(d_big_y**2, axis=2)
        + np.sum(dz**2, axis=(2, 3))
        + np.sum(d_big_z**2, axis=(2, 3))
    )
    integral = per_node[:, :n].sum(axis=1) * dt
    terminal = np.sum(dy[:, n] ** 2, axis=1)
    return float(np.mean(integral + terminal))


# ----------------------------------------------------------------------------
# One decoupled step
# ----------------------------------------------------------------------------


def _forward_phase(
    drifts: np.ndarray,
    noises: np.ndarray,
    drivers: BrownianPair,
    x0: np.ndarray,
    reg: RegressionConfig,
    btail: np.ndarray,
    max_sweeps: int = 5,
) -> tuple[np.ndarray, np.ndarray]:
    """Euler propagation of the forward pair (y, z).

    ``drifts``/``noises`` are precomputed per-node arrays (M, N+1, d) and
    (M, N+1, d, d_w).  z rides the backward increments at the right node and is
    recovered per sweep by regressing the one-step martingale residual on dB;
    the pair is iterated to a small fixed point (at most ``max_sweeps``).
    """
    m, n, _ = drivers.dW.shape
    d = x0.shape[1]
    d_b = drivers.dB.shape[2]
    dt = drivers.grid.dt
    z_nodes = np.zeros((m, n + 1, d, d_b))
    y = np.zeros((m, n + 1, d))
    for sweep in range(max_sweeps):
        y[:, 0] = x0
        for k in range(n):
            y[:, k + 1] = (
                y[:, k]
                + drifts[:, k] * dt
                + np.einsum("mij,mj->mi", noises[:, k], drivers.dW[:, k])
                - np.einsum("mij,mj->mi", z_nodes[:, k + 1], drivers.dB[:, k])
            )
        z_new = np.zeros_like(z_nodes)
        for k in range(n):
            mart = y[:, k + 1] - y[:, k] - drifts[:, k] * dt
            target = (mart[:, :, None] * drivers.dB[:, k][:, None, :]).reshape(m, -1)
            phi = reg.features(y[:, k], btail[:, k])
            fitted = _fit(phi, target, reg.ridge, k)
            z_new[:, k + 1] = -fitted.reshape(m, d, d_b) / dt
        z_new[:, 0] = z_new[:, 1]
        change = float(np.sqrt(np.mean((z_new - z_nodes) ** 2)))
        scale = float(np.sqrt(np.mean(z_new**2)))
        z_nodes = z_new
        if change <= 1e-10 + 1e-3 * scale:
            break
    # final propagation consistent with the settled z
    y[:, 0] = x0
    for k in range(n):
        y[:, k + 1] = (
            y[:, k]
            + drifts[:, k] * dt
            + np.einsum("mij,mj->mi", noises[:, k], drivers.dW[:, k])
            - np.einsum("mij,mj->mi", z_nodes[:, k + 1], drivers.dB[:, k])
        )
    return y, z_nodes


def _backward_phase(
    terminal: np.ndarray,
    drifts: np.ndarray,
    noises_b: np.ndarray,
    drivers: BrownianPair,
    y_path: np.ndarray,
    reg: RegressionConfig,
    btail: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Regression sweep for the backward pair (Y, Z).

    Y_k = E_k[Y_{k+1} - drift_k dt] - noiseB_{k+1} dB_k; the backward-noise
    term stays outside the projection because dB_k is known at node k.  Z_k
    regresses the centered Y_{k+1} against dW_k; centering by the fitted
    Y_{k+1} keeps the estimator variance at the cross-sectional spread scale.
    """
    m, n, d_w = drivers.dW.shape
    d = terminal.shape[1]
    dt = drivers.grid.dt
    big_y = np.zeros((m, n + 1, d))
    big_z = np.zeros((m, n + 1, d, d_w))
    big_y[:, n] = terminal
    for k in range(n - 1, -1, -1):
        phi = reg.features(y_path[:, k], btail[:, k])
        stacked = np.concatenate([big_y[:, k + 1], drifts[:, k] * dt], axis=1)
        fitted = _fit(phi, stacked, reg.ridge, k)
        fit_y_next, fit_drift = fitted[:, :d], fitted[:, d:]
        big_y[:, k] = (
            fit_y_next
            - fit_drift
            - np.einsum("mij,mj->mi", noises_b[:, k + 1], drivers.dB[:, k])
        )
        centered = big_y[:, k + 1] - fit_y_next
        target = (centered[:, :, None] * drivers.dW[:, k][:, None, :]).reshape(m, -1)
        big_z[:, k] = _fit(phi, target, reg.ridge, k).reshape(m, d, d_w) / dt
    big_z[:, n] = big_z[:, n - 1]
    return big_y, big_z


def solve_decoupled_step(
    problem: HomotopyProblem,
    frozen: EnsembleState,
    drivers: BrownianPair,
    reg: RegressionConfig,
) -> EnsembleState:
    """One application of the frozen-coefficient solve map.

    Every coefficient (including the problem's own alpha-level nonlinearities
    and all law arguments) is evaluated on the ``frozen`` ensemble; only the
    linear propagation structure acts on the new unknowns.  The terminal map
    is applied to the newly propagated y_N.
    """
    grid = frozen.grid
    if drivers.grid.steps != grid.steps or drivers.particles != frozen.particles:
        raise ValueError("frozen state and drivers disagree in shape")
    n = grid.steps
    nodes = grid.nodes
    m = frozen.particles
    dims = problem.dims
    laws = frozen.node_laws()

    f_hat = np.zeros((m, n + 1, dims.d))
    g_hat = np.zeros((m, n + 1, dims.d, dims.d_w))
    fb_hat = np.zeros((m, n + 1, dims.d))
    gb_hat = np.zeros((m, n + 1, dims.d, dims.d_b))
    for k in range(n + 1):
        vk = frozen.at(k)
        f_hat[:, k] = problem.f_at(k, nodes[k], vk, laws[k])
        g_hat[:, k] = problem.g_at(k, nodes[k], vk, laws[k])
        fb_hat[:, k] = problem.F_at(k, nodes[k], vk, laws[k])
        gb_hat[:, k] = problem.G_at(k, nodes[k], vk, laws[k])

    btail = drivers.b_tail()
    x0 = problem.initial(m)
    y, z_nodes = _forward_phase(f_hat, g_hat, drivers, x0, reg, btail)
    y_t = y[:, n]
    terminal = problem.terminal(y_t, EmpiricalLaw.from_samples(y_t))
    big_y, big_z = _backward_phase(terminal, fb_hat, gb_hat, drivers, y, reg, btail)
    return EnsembleState(y=y, Y=big_y, z=z_nodes, Z=big_z, grid=grid)


def linear_base_solve(
    problem: HomotopyProblem,
    drivers: BrownianPair,
    reg: RegressionConfig,
) -> EnsembleState:
    """Exact-sweep solution of the alpha = 0 member.

    In case1 the forward pair decouples (forcing only) and the backward pair is
    linear in the already-known (y, z); in case2 the backward pair decouples
    and the forward drift/noise are linear in the known (Y, Z).  Either way a
    single pass of explicit sweeps suffices; only the small (y, z) fixed point
    is iterated.
    """
    if problem.alpha != 0.0:
        raise ValueError("linear base solve requires alpha = 0")
    grid = drivers.grid
    n = grid.steps
    m = drivers.particles
    dims = problem.dims
    btail = drivers.b_tail()
    x0 = problem.initial(m)
    forcing = problem.forcing

    def forcing_array(which: str, shape: tuple) -> np.ndarray:
        arr = getattr(forcing, which)
        return np.zeros(shape) if arr is None else arr

    f_force = forcing_array("f_term", (m, n + 1, dims.d))
    g_force = forcing_array("g_term", (m, n + 1, dims.d, dims.d_w))
    fb_force = forcing_array("F_term", (m, n + 1, dims.d))
    gb_force = forcing_array("G_term", (m, n + 1, dims.d, dims.d_b))

    if problem.case == "case1":
        y, z_nodes = _forward_phase(f_force, g_force, drivers, x0, reg, btail)
        y_t = y[:, n]
        terminal = problem.terminal(y_t, EmpiricalLaw.from_samples(y_t))
        drifts = -problem.theta1 * y + fb_force
        noises_b = -problem.theta1 * z_nodes + gb_force
        big_y, big_z = _backward_phase(
            terminal, drifts, noises_b, drivers, y, reg, btail
        )
        return EnsembleState(y=y, Y=big_y, z=z_nodes, Z=big_z, grid=grid)

    # case2: backward pair first (terminal = xi only), then the damped forward
    zeros_y = np.zeros((m, n + 1, dims.d))
    terminal = problem.terminal(x0, EmpiricalLaw.from_samples(x0))  # alpha*h == 0
    big_y, big_z = _backward_phase(
        terminal, fb_force, gb_force, drivers, zeros_y, reg, btail
    )
    drifts = -problem.theta2 * big_y + f_force
    noises = -problem.theta2 * big_z + g_force
    y, z_nodes = _forward_phase(drifts, noises, drivers, x0, reg, btail)
    return EnsembleState(y=y, Y=big_y, z=z_nodes, Z=big_z, grid=grid)


# ----------------------------------------------------------------------------
# Picard iteration and the continuation ladder
# ----------------------------------------------------------------------------


def picard_solve(
    problem: HomotopyProblem,
    warm: EnsembleState,
    drivers: BrownianPair,
    reg: RegressionConfig,
    tol: float = 1e-5,
    max_iter: int = 60,
    damping: float = 1.0,
) -> SolveReport:
    """Iterate the frozen step until the contraction metric between successive
    iterates drops below ``tol``.

    ``damping`` in (0, 1] relaxes the update; 1 is the plain iteration.
    Raises SolverError("Picard divergence") when the distance blows past 1e6
    of its first value, with the partial report attached.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    start = time.perf_counter()
    report = SolveReport(final_state=warm)
    current = warm
    d_first = None
    for it in range(1, max_iter + 1):
        proposal = solve_decoupled_step(problem, current, drivers, reg)
        if damping < 1.0:
            proposal = EnsembleState(
                y=(1 - damping) * current.y + damping * proposal.y,
                Y=(1 - damping) * current.Y + damping * proposal.Y,
                z=(1 - damping) * current.z + damping * proposal.z,
                Z=(1 - damping) * current.Z + damping * proposal.Z,
                grid=current.grid,
            )
        dist = d_metric(proposal, current)
        if report.picard_residuals:
            prev = report.picard_residuals[-1]
            if prev > 0:
                report.contraction_ratios.append(dist / prev)
        report.picard_residuals.append(dist)
        current = proposal
        report.iterations = it
        if d_first is None:
            d_first = dist
        if dist <= tol:
            report.converged = True
            break
        if d_first > 0 and dist > 1e6 * d_first:
            report.final_state = current
            report.wallclock = time.perf_counter() - start
            raise SolverError("Picard divergence", report)
    report.final_state = current
    report.residuals = residual(problem, current, drivers)
    report.alpha_ladder = [
        LadderRung(
            alpha=problem.alpha,
            iterations=report.iterations,
            converged=report.converged,
            final_distance=report.picard_residuals[-1] if report.picard_residuals else 0.0,
            median_ratio=report.tail_median_ratio(),
            residual_history=list(report.picard_residuals),
        )
    ]
    report.wallclock = time.perf_counter() - start
    return report


def continuation_solve(
    base: CoefficientSet,
    case: str,
    theta1: float,
    theta2: float,
    delta: float,
    drivers: BrownianPair,
    reg: RegressionConfig,
    tol: float = 1e-5,
    *,
    x: np.ndarray | None = None,
    xi: np.ndarray | None = None,
    forcing: Forcing | None = None,
    terminal_kind: str = "map",
    c: float = 1.0,
    max_iter: int = 60,
    damping: float = 1.0,
    max_halvings: int = 3,
) -> SolveReport:
    """Climb the alpha ladder 0 -> 1 in steps of ``delta``.

    The base rung is solved exactly; each later rung runs the Picard iteration
    warm-started at the previous rung.  A failed rung halves the step (up to
    ``max_halvings`` times) before giving up with the partial ladder attached.
    """
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    start = time.perf_counter()
    problem = HomotopyProblem(
        base=base,
        alpha=0.0,
        case=case,
        theta1=theta1,
        theta2=theta2,
        forcing=forcing or Forcing(),
        xi=xi,
        x=x,
        terminal_kind=terminal_kind,
        c=c,
    )
    state = linear_base_solve(problem, drivers, reg)
    ladder = [LadderRung(0.0, 0, True, 0.0, 0.0)]
    report = SolveReport(final_state=state, alpha_ladder=ladder)
    alpha = 0.0
    step = delta
    halvings = 0
    while alpha < 1.0 - 1e-12:
        target = min(1.0, alpha + step)
        rung_problem = problem.at_alpha(target)
        try:
            rung = picard_solve(
                rung_problem, state, drivers, reg, tol, max_iter, damping
            )
        except SolverError as err:
            rung = err.report
        if rung is None or not rung.converged:
            halvings += 1
            if halvings > max_halvings:
                if rung is not None:
                    ladder.extend(rung.alpha_ladder)
                    report.final_state = rung.final_state
                report.wallclock = time.perf_counter() - start
                raise SolverError(
                    f"continuation failed at alpha={target:.4f}", report
                )
            step /= 2.0
            continue
        ladder.extend(rung.alpha_ladder)
        state = rung.final_state
        alpha = target
        report.picard_residuals = rung.picard_residuals
        report.contraction_ratios = rung.contraction_ratios
        report.iterations += rung.iterations
    report.final_state = state
    report.converged = all(r.converged for r in ladder)
    report.residuals = residual(problem.at_alpha(1.0), state, drivers)
    report.wallclock = time.perf_counter() - start
    return report


def detect_nonuniqueness(
    problem: HomotopyProblem,
    warm_starts: list[EnsembleState],
    drivers: BrownianPair,
    reg: RegressionConfig,
    tol: float = 1e-5,
    max_iter: int = 60,
    damping: float = 1.0,
) -> "NonuniquenessReport":
    """Run the Picard iteration from several warm starts and compare limits."""
    limits: list[SolveReport] = []
    for warm in warm_starts:
        try:
            limits.append(
                picard_solve(problem, warm, drivers, reg, tol, max_iter, damping)
            )
        except SolverError as err:
            if err.report is not None:
                limits.append(err.report)
    n = len(limits)
    distances = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            dij = d_metric(limits[i].final_state, limits[j].final_state)
            distances[i, j] = distances[j, i] = dij
    return NonuniquenessReport(limits=limits, pairwise_distances=distances)


@dataclass
class NonuniquenessReport:
    limits: list[SolveReport]
    pairwise_distances: np.ndarray

    @property
    def max_distance(self) -> float:
        return float(self.pairwise_distances.max()) if self.limits else 0.0


# ----------------------------------------------------------------------------
# Deterministic moment oracle
# ----------------------------------------------------------------------------


@dataclass
class MomentOracleResult:
    times: np.ndarray
    y: np.ndarray  # (N+1, d)
    Y: np.ndarray  # (N+1, d)
    unique: bool
    roots: list[list[float]]  # per component
    noise_free: bool = True  # the oracle asserts z* = Z* = 0


def _deterministic_rhs(model: CoefficientSet, t: float, y: float, big_y: float,
                       component: int) -> tuple[float, float]:
    dims = model.dims
    v = Quad.zeros(1, dims)
    v.y[0, component] = y
    v.Y[0, component] = big_y
    law = quad_law(v)
    fy = model.f(t, v, law)[0, component]
    f_big = model.F(t, v, law)[0, component]
    return float(fy), float(f_big)


def _terminal_residual(model: CoefficientSet, grid: TimeGrid, x0: float,
                       y0_guess: float, component: int) -> tuple[float, np.ndarray]:
    """Integrate the noise-free reduction by RK4 and return the terminal gap."""
    n = grid.steps
    dt = grid.dt
    path = np.zeros((n + 1, 2))
    path[0] = (x0, y0_guess)
    t = 0.0
    for k in range(n):
        s = path[k]

        def rhs(state: np.ndarray, tt: float) -> np.ndarray:
            a, b = _deterministic_rhs(model, tt, state[0], state[1], component)
            return np.array([a, b])

        k1 = rhs(s, t)
        k2 = rhs(s + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = rhs(s + 0.5 * dt * k2, t + 0.5 * dt)
        k4 = rhs(s + dt * k3, t + dt)
        path[k + 1] = s + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
    y_t = path[n, 0]
    dims = model.dims
    vec = np.zeros((1, dims.d))
    vec[0, component] = y_t
    h_val = model.h(vec, EmpiricalLaw.from_samples(vec))[0, component]
    return float(path[n, 1] - h_val), path


def moment_ode_oracle(
    model: CoefficientSet,
    x: np.ndarray | float,
    grid: TimeGrid,
    *,
    bracket_scale: float = 8.0,
    scan_points: int = 161,
) -> MomentOracleResult:
    """Shooting solution of the noise-free mean reduction.

    Applies to first-moment models whose forward/backward noise coefficients
    vanish on deterministic inputs with z = Z = 0 and whose components
    decouple.  Each component's unknown Y(0) is scanned over a bracket; sign
    changes are bisected to full precision.  Finding several distinct roots
    (or a root continuum) flags the boundary-value problem as non-unique.
    """
    if model.law_dependence not in ("none", "first_moment"):
        raise ValueError("oracle needs a first-moment (or law-free) model")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = model.dims.d
    n = grid.steps
    y_out = np.zeros((n + 1, d))
    big_y_out = np.zeros((n + 1, d))
    roots_all: list[list[float]] = []
    unique = True
    for comp in range(d):
        x0 = float(x[comp])
        lo = -bracket_scale * (1.0 + abs(x0))
        hi = bracket_scale * (1.0 + abs(x0))
        guesses = np.linspace(lo, hi, scan_points)
        values = np.array(
            [_terminal_residual(model, grid, x0, g, comp)[0] for g in guesses]
        )
        scale = max(1.0, float(np.max(np.abs(values))))
        ztol = 1e-9 * scale
        roots: list[float] = []
        plateau = int(np.sum(np.abs(values) <= ztol))
        if plateau >= 2:
            # residual vanishes on a whole sweep: a continuum of solutions
            roots = [float(g) for g in guesses[np.abs(values) <= ztol][:8]]
            unique = False
        else:
            for i in range(scan_points - 1):
                a, b = guesses[i], guesses[i + 1]
                fa, fb = values[i], values[i + 1]
                if abs(fa) <= ztol:
                    roots.append(float(a))
                    continue
                if fa * fb < 0:
                    for _ in range(200):
                        mid = 0.5 * (a + b)
                        fm = _terminal_residual(model, grid, x0, mid, comp)[0]
                        if fa * fm <= 0:
                            b = mid
                        else:
                            a, fa = mid, fm
                        if b - a <= 1e-15 * max(1.0, abs(a)):
                            break
                    roots.append(float(0.5 * (a + b)))
            if abs(values[-1]) <= ztol:
                roots.append(float(guesses[-1]))
            # deduplicate
            dedup: list[float] = []
            for r in roots:
                if not dedup or abs(r - dedup[-1]) > 1e-6 * (1.0 + hi - lo):
                    dedup.append(r)
            roots = dedup
            if len(roots) > 1:
                unique = False
        if not roots:
            raise SolverError(
                f"shooting failed to bracket a root for component {comp}"
            )
        roots_all.append(roots)
        _, path = _terminal_residual(model, grid, x0, roots[0], comp)
        y_out[:, comp] = path[:, 0]
        big_y_out[:, comp] = path[:, 1]
    return MomentOracleResult(
        times=grid.nodes, y=y_out, Y=big_y_out, unique=unique, roots=roots_all
    )


# ----------------------------------------------------------------------------
# CSV export
# ----------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def trajectory_rows(state: EnsembleState) -> tuple[list[str], list[list[str]]]:
    d = state.y.shape[2]
    header = (
        ["t"]
        + [f"mean_y_{i}" for i in range(d)]
        + [f"mean_Y_{i}" for i in range(d)]
        + ["rms_z", "rms_Z", "std_y", "std_Y"]
    )
    rows = []
    for k, t in enumerate(state.grid.nodes):
        mean_y = state.y[:, k].mean(axis=0)
        mean_big = state.Y[:, k].mean(axis=0)
        rms_z = np.sqrt(np.mean(np.sum(state.z[:, k] ** 2, axis=(1, 2))))
        rms_big = np.sqrt(np.mean(np.sum(state.Z[:, k] ** 2, axis=(1, 2))))
        std_y = np.sqrt(np.mean(np.sum((state.y[:, k] - mean_y) ** 2, axis=1)))
        std_big = np.sqrt(np.mean(np.sum((state.Y[:, k] - mean_big) ** 2, axis=1)))
        rows.append(
            [_fmt(t)]
            + [_fmt(v) for v in mean_y]
            + [_fmt(v) for v in mean_big]
            + [_fmt(rms_z), _fmt(rms_big), _fmt(std_y), _fmt(std_big)]
        )
    return header, rows


def ladder_rows(report: SolveReport) -> tuple[list[str], list[list[str]]]:
    header = ["alpha", "iterations", "final_D", "median_ratio"]
    rows = [
        [_fmt(r.alpha), str(r.iterations), _fmt(r.final_distance), _fmt(r.median_ratio)]
        for r in report.alpha_ladder
    ]
    return header, rows


def write_csv(path: str, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
