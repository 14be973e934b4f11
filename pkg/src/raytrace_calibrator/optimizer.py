"""Alternating three-stage TX/RX location calibration.

Each iteration optimizes the RX with the TX fixed, then the TX with the RX
fixed. Every 2D subproblem runs a coarse grid anchored at the endpoint's
initial position, a fine grid around the coarse winner and a bounded Powell
search from the fine winner. Candidates never leave the d_max ball around the
initial position and never change height.
"""

import itertools
import math
import threading
from collections.abc import Callable, Iterator
from concurrent.futures import Executor, ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from raytrace_calibrator.align import DEFAULT_SEARCH_WINDOW_NS
from raytrace_calibrator.geo import LocalPosition
from raytrace_calibrator.loss import LossBreakdown, LossWeights, composite_loss
from raytrace_calibrator.pdp import (
    MAX_EXTENT_NS,
    EmptyProfileError,
    PowerDelayProfile,
    clamp_extent,
    smooth_pdp,
    synthesize_pdp,
)
from raytrace_calibrator.raytrace import MIN_PATH_POWER_DBM, ForwardModel, GeometryError

Endpoint = Literal["TX", "RX"]
StageName = Literal["coarse", "fine", "powell"]
Objective = Callable[[LocalPosition], LossBreakdown]

GOLDEN_RATIO = (math.sqrt(5.0) - 1.0) / 2.0

# Line-search tolerance as a fraction of the Powell tolerance
LINE_TOLERANCE_DIVISOR = 20.0

# Slack on the d_max ball test for floating-point round-off
_BALL_SLACK_M = 1e-9


class EvaluationBudgetExceeded(RuntimeError):
    """Raised when the forward-evaluation budget is used up."""


class OptimizerConfig(BaseModel):
    """Search geometry, stopping rules and budgets."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    d_max_m: float = Field(default=10.0, gt=0, description="Max horizontal adjustment per endpoint")
    coarse_offsets_m: tuple[float, ...] = Field(
        default=(-5.0, -2.5, 0.0, 2.5, 5.0), description="Per-axis coarse offsets"
    )
    fine_halfwidth_m: float = Field(default=1.5, gt=0)
    fine_step_m: float = Field(default=0.5, gt=0)
    powell_tol_m: float = Field(default=0.1, gt=0)
    epsilon_m: float = Field(default=0.1, gt=0, description="Position convergence threshold")
    rel_loss_tol: float = Field(default=1e-3, gt=0)
    n_max_iters: int = Field(default=10, ge=1)
    line_search_bracket_m: float = Field(default=2.5, gt=0)
    max_line_evals: int = Field(default=20, ge=3)
    eval_budget: int = Field(default=1500, ge=1)
    align_window_ns: float = Field(default=DEFAULT_SEARCH_WINDOW_NS, gt=0)

    @field_validator("coarse_offsets_m")
    @classmethod
    def validate_coarse_offsets(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        """Require five strictly increasing offsets including zero."""
        if len(v) != 5:
            raise ValueError(f"coarse grid needs 5 offsets per axis, got {len(v)}")
        if any(b <= a for a, b in itertools.pairwise(v)):
            raise ValueError("coarse offsets must be strictly increasing")
        if 0.0 not in v:
            raise ValueError("coarse offsets must include 0")
        return v

    @model_validator(mode="after")
    def validate_fine_grid(self) -> "OptimizerConfig":
        """Require a 7x7 fine grid."""
        half_steps = self.fine_halfwidth_m / self.fine_step_m
        if abs(half_steps - 3.0) > 1e-9:
            raise ValueError(
                "fine grid must be 7x7: fine_halfwidth_m / fine_step_m must equal 3"
            )
        return self

    @property
    def fine_offsets_m(self) -> tuple[float, ...]:
        return tuple(i * self.fine_step_m for i in range(-3, 4))


@dataclass(frozen=True)
class Candidate:
    """One evaluated position of a stage."""

    position: LocalPosition
    loss: LossBreakdown


@dataclass(frozen=True)
class StageTrace:
    """Everything one stage evaluated and what it picked."""

    stage: StageName
    endpoint: Endpoint
    candidates: tuple[Candidate, ...]
    chosen: LocalPosition
    chosen_loss: LossBreakdown
    eval_count: int
    all_outage: bool = False


@dataclass
class IterationTrace:
    """Positions and loss at the end of one alternating iteration."""

    iteration: int
    tx: LocalPosition
    rx: LocalPosition
    loss: LossBreakdown
    stages: list[StageTrace] = field(default_factory=list)
    complete: bool = True


@dataclass
class CalibrationResult:
    """Outcome of a calibration run."""

    tx_initial: LocalPosition
    rx_initial: LocalPosition
    tx_star: LocalPosition
    rx_star: LocalPosition
    initial_loss: LossBreakdown
    final_loss: LossBreakdown
    iterations: list[IterationTrace]
    eval_count: int
    converged: bool
    budget_exhausted: bool = False

    @property
    def iterations_used(self) -> int:
        return len(self.iterations)

    @property
    def loss_reduction_pct(self) -> float:
        if self.initial_loss.total <= 0:
            return 0.0
        return 100.0 * (self.initial_loss.total - self.final_loss.total) / self.initial_loss.total

    @property
    def tx_adjustment(self) -> tuple[float, float]:
        return (self.tx_star.x_m - self.tx_initial.x_m, self.tx_star.y_m - self.tx_initial.y_m)

    @property
    def rx_adjustment(self) -> tuple[float, float]:
        return (self.rx_star.x_m - self.rx_initial.x_m, self.rx_star.y_m - self.rx_initial.y_m)


PairKey = tuple[tuple[float, float, float], tuple[float, float, float]]


def simulate_profile(
    model: ForwardModel,
    tx: LocalPosition,
    rx: LocalPosition,
    bin_width_ns: float,
    cutoff_dbm: float = MIN_PATH_POWER_DBM,
    max_extent_ns: float = MAX_EXTENT_NS,
    smoothing_ns: float = 0.0,
) -> PowerDelayProfile | None:
    """Trace one pair and bin it into a clamped PDP.

    With smoothing_ns > 0 the binned profile is Gaussian-smoothed in delay to
    match a locally averaged measurement.

    Returns:
        Simulated profile, or None when no path survives the cutoff
    """
    paths = model.trace(tx, rx)
    try:
        profile = clamp_extent(synthesize_pdp(paths, bin_width_ns, cutoff_dbm), max_extent_ns)
    except EmptyProfileError:
        return None
    return smooth_pdp(profile, smoothing_ns)


class LossEvaluator:
    """Memoized, budgeted loss of a TX/RX pair against one measurement.

    Safe to call from several threads. Only real forward-model calls count
    against the budget; repeated pairs are served from the cache.
    """

    def __init__(
        self,
        model: ForwardModel,
        meas: PowerDelayProfile,
        tx0: LocalPosition,
        rx0: LocalPosition,
        weights: LossWeights | None = None,
        eval_budget: int = 1500,
        bin_width_ns: float | None = None,
        cutoff_dbm: float = MIN_PATH_POWER_DBM,
        max_extent_ns: float = MAX_EXTENT_NS,
        window_ns: float = DEFAULT_SEARCH_WINDOW_NS,
        smoothing_ns: float = 0.0,
    ) -> None:
        """Initialize the evaluator.

        Args:
            model: Forward model
            meas: Measured profile, fixed for the whole run
            tx0: Initial TX position (adjustments are measured from it)
            rx0: Initial RX position
            weights: Loss weights
            eval_budget: Maximum number of forward-model calls
            bin_width_ns: Synthesis bin width (defaults to the measured grid's)
            cutoff_dbm: Path power cutoff for synthesis
            max_extent_ns: Simulated profiles are clamped to this extent
            window_ns: Alignment search half-width
            smoothing_ns: Gaussian delay smoothing of simulated profiles
        """
        self.model = model
        self.meas = meas
        self.tx0 = tx0
        self.rx0 = rx0
        self.weights = weights or LossWeights()
        self.eval_budget = eval_budget
        self.bin_width_ns = bin_width_ns or meas.bin_width_ns
        self.cutoff_dbm = cutoff_dbm
        self.max_extent_ns = max_extent_ns
        self.window_ns = window_ns
        self.smoothing_ns = smoothing_ns

        self.eval_count = 0
        self._cache: dict[PairKey, LossBreakdown] = {}
        self._best: tuple[tuple[float, float, PairKey], LocalPosition, LocalPosition] | None = None
        self._lock = threading.Lock()

    def simulate(self, tx: LocalPosition, rx: LocalPosition) -> PowerDelayProfile | None:
        """Run the forward model and bin its paths; None on outage."""
        return simulate_profile(
            self.model,
            tx,
            rx,
            self.bin_width_ns,
            self.cutoff_dbm,
            self.max_extent_ns,
            self.smoothing_ns,
        )

    def evaluate(self, tx: LocalPosition, rx: LocalPosition, strict: bool = False) -> LossBreakdown:
        """Loss of one TX/RX pair.

        Args:
            tx: Candidate TX position
            rx: Candidate RX position
            strict: Propagate GeometryError instead of scoring the pair as an outage

        Returns:
            Loss breakdown (cached per exact position pair)

        Raises:
            EvaluationBudgetExceeded: A new forward call would exceed the budget
        """
        key: PairKey = (tx.as_tuple(), rx.as_tuple())
        with self._lock:
            cached = self._cache.get(key)
            if cached is not None:
                return cached
            if self.eval_count >= self.eval_budget:
                raise EvaluationBudgetExceeded(
                    f"Forward-evaluation budget of {self.eval_budget} exhausted"
                )
            self.eval_count += 1

        d_tx = tx.horizontal_distance_to(self.tx0)
        d_rx = rx.horizontal_distance_to(self.rx0)
        try:
            sim = self.simulate(tx, rx)
        except GeometryError:
            if strict:
                raise
            # An antenna inside a building receives nothing
            sim = None
        loss = composite_loss(sim, self.meas, d_tx, d_rx, self.weights, self.window_ns)

        rank = (loss.total, d_tx**2 + d_rx**2, key)
        with self._lock:
            self._cache[key] = loss
            if self._best is None or rank < self._best[0]:
                self._best = (rank, tx, rx)
        return loss

    def best_pair(self) -> tuple[LocalPosition, LocalPosition]:
        """Lowest-loss pair evaluated so far."""
        if self._best is None:
            raise ValueError("No pair has been evaluated")
        return self._best[1], self._best[2]

    def objective(self, which: Endpoint, fixed_other: LocalPosition) -> Objective:
        """Loss as a function of one endpoint with the other held fixed."""
        if which == "RX":
            return lambda p: self.evaluate(fixed_other, p)
        return lambda p: self.evaluate(p, fixed_other)


def _rank(c: Candidate, anchor: LocalPosition) -> tuple[float, float, float, float]:
    dx = c.position.x_m - anchor.x_m
    dy = c.position.y_m - anchor.y_m
    return (c.loss.total, math.hypot(dx, dy), dx, dy)


def _in_ball(p: LocalPosition, anchor: LocalPosition, d_max_m: float) -> bool:
    return p.horizontal_distance_to(anchor) <= d_max_m + _BALL_SLACK_M


def _grid_stage(
    stage: StageName,
    endpoint: Endpoint,
    positions: list[LocalPosition],
    objective: Objective,
    anchor: LocalPosition,
    executor: Executor | None,
) -> tuple[LocalPosition, StageTrace]:
    if not positions:
        raise ValueError(f"{stage} stage has no feasible candidate")
    if executor is None:
        losses = [objective(p) for p in positions]
    else:
        # map() yields in submission order whatever the completion order
        losses = list(executor.map(objective, positions))

    candidates = tuple(Candidate(p, loss) for p, loss in zip(positions, losses, strict=True))
    best = min(candidates, key=lambda c: _rank(c, anchor))
    return best.position, StageTrace(
        stage=stage,
        endpoint=endpoint,
        candidates=candidates,
        chosen=best.position,
        chosen_loss=best.loss,
        eval_count=len(candidates),
        all_outage=all(c.loss.outage for c in candidates),
    )


def coarse_grid_stage(
    objective: Objective,
    p0: LocalPosition,
    cfg: OptimizerConfig,
    endpoint: Endpoint = "RX",
    executor: Executor | None = None,
) -> tuple[LocalPosition, StageTrace]:
    """Evaluate the coarse grid anchored at the endpoint's initial position.

    Args:
        objective: Loss of a candidate position for this endpoint
        p0: Initial position of the endpoint
        cfg: Optimizer configuration
        endpoint: Which endpoint is being moved (recorded in the trace)
        executor: Optional pool for concurrent evaluation

    Returns:
        Best position and the stage trace; ties go to the smaller adjustment,
        then the smaller (dx, dy)
    """
    offsets = cfg.coarse_offsets_m
    positions = [
        p0.offset(dx, dy)
        for dx in offsets
        for dy in offsets
        if math.hypot(dx, dy) <= cfg.d_max_m + _BALL_SLACK_M
    ]
    return _grid_stage("coarse", endpoint, positions, objective, p0, executor)


def fine_grid_stage(
    objective: Objective,
    center: LocalPosition,
    p0: LocalPosition,
    cfg: OptimizerConfig,
    endpoint: Endpoint = "RX",
    executor: Executor | None = None,
) -> tuple[LocalPosition, StageTrace]:
    """Evaluate the 7x7 fine grid around center, restricted to the d_max ball around p0."""
    offsets = cfg.fine_offsets_m
    grid = [center.offset(dx, dy) for dx in offsets for dy in offsets]
    positions = [p for p in grid if _in_ball(p, p0, cfg.d_max_m)]
    return _grid_stage("fine", endpoint, positions, objective, p0, executor)


class _PowellBudgetReached(Exception):
    pass


def _feasible_interval(
    x: LocalPosition, u: tuple[float, float], p0: LocalPosition, d_max_m: float, bracket_m: float
) -> tuple[float, float]:
    """Step range [lo, hi] along unit u keeping x + alpha*u inside the bracket and the ball."""
    rx = x.x_m - p0.x_m
    ry = x.y_m - p0.y_m
    ur = u[0] * rx + u[1] * ry
    disc = ur * ur - (rx * rx + ry * ry - d_max_m * d_max_m)
    if disc < 0:
        return 0.0, 0.0
    root = math.sqrt(disc)
    lo = max(-bracket_m, -ur - root + _BALL_SLACK_M)
    hi = min(bracket_m, -ur + root - _BALL_SLACK_M)
    return min(lo, 0.0), max(hi, 0.0)


def powell_stage(
    objective: Objective,
    start: LocalPosition,
    p0: LocalPosition,
    cfg: OptimizerConfig,
    endpoint: Endpoint = "RX",
) -> tuple[LocalPosition, StageTrace]:
    """Bounded 2D Powell search from start.

    Directions start as the coordinate axes. Each line minimization is a
    golden-section search over a step range of ±line_search_bracket_m,
    clipped to the d_max ball around p0, and returns the best point it
    evaluated. After each sweep an extra line search runs along the sweep's
    net displacement, which then replaces the direction that gave the largest
    single-line improvement. The search stops once a sweep moves less than
    powell_tol_m or after 4*max_line_evals evaluations.

    Args:
        objective: Loss of a candidate position for this endpoint
        start: Starting position (the fine-grid winner)
        p0: Initial position of the endpoint (ball center)
        cfg: Optimizer configuration
        endpoint: Which endpoint is being moved (recorded in the trace)

    Returns:
        Best evaluated position (never worse than start) and the stage trace
    """
    max_evals = 4 * cfg.max_line_evals
    line_tol = cfg.powell_tol_m / LINE_TOLERANCE_DIVISOR
    candidates: list[Candidate] = []

    def f(p: LocalPosition) -> LossBreakdown:
        if len(candidates) >= max_evals:
            raise _PowellBudgetReached
        loss = objective(p)
        candidates.append(Candidate(p, loss))
        return loss

    def line_search(
        x: LocalPosition, fx: LossBreakdown, u: tuple[float, float]
    ) -> tuple[LocalPosition, LossBreakdown]:
        a, b = _feasible_interval(x, u, p0, cfg.d_max_m, cfg.line_search_bracket_m)
        best = (x, fx)
        if b - a <= line_tol:
            return best

        def line_point(alpha: float) -> LossBreakdown:
            nonlocal best
            p = x.offset(alpha * u[0], alpha * u[1])
            loss = f(p)
            if loss.total < best[1].total:
                best = (p, loss)
            return loss

        c = b - GOLDEN_RATIO * (b - a)
        d = a + GOLDEN_RATIO * (b - a)
        fc = line_point(c).total
        fd = line_point(d).total
        evals = 2
        while b - a > line_tol and evals < cfg.max_line_evals:
            if fc < fd:
                b, d, fd = d, c, fc
                c = b - GOLDEN_RATIO * (b - a)
                fc = line_point(c).total
            else:
                a, c, fc = c, d, fd
                d = a + GOLDEN_RATIO * (b - a)
                fd = line_point(d).total
            evals += 1
        return best

    directions: list[tuple[float, float]] = [(1.0, 0.0), (0.0, 1.0)]
    x, fx = start, f(start)
    try:
        while True:
            sweep_start = x
            largest_drop, largest_index = -math.inf, 0
            for i, u in enumerate(directions):
                x_new, fx_new = line_search(x, fx, u)
                drop = fx.total - fx_new.total
                if drop > largest_drop:
                    largest_drop, largest_index = drop, i
                x, fx = x_new, fx_new

            dx = x.x_m - sweep_start.x_m
            dy = x.y_m - sweep_start.y_m
            moved = math.hypot(dx, dy)
            if moved == 0.0:
                # Degenerate u_new: keep the direction set and stop
                break
            u_new = (dx / moved, dy / moved)
            x, fx = line_search(x, fx, u_new)
            del directions[largest_index]
            directions.append(u_new)

            if x.horizontal_distance_to(sweep_start) < cfg.powell_tol_m:
                break
    except _PowellBudgetReached:
        pass

    best = min(candidates, key=lambda c: _rank(c, p0))
    return best.position, StageTrace(
        stage="powell",
        endpoint=endpoint,
        candidates=tuple(candidates),
        chosen=best.position,
        chosen_loss=best.loss,
        eval_count=len(candidates),
        all_outage=all(c.loss.outage for c in candidates),
    )


def _solve_subproblem(
    evaluator: LossEvaluator,
    which: Endpoint,
    incumbent: LocalPosition,
    fixed_other: LocalPosition,
    cfg: OptimizerConfig,
    executor: Executor | None,
    stages: list[StageTrace],
) -> LocalPosition:
    """Run coarse, fine and Powell for one endpoint; keep the incumbent if they end worse."""
    p0 = evaluator.rx0 if which == "RX" else evaluator.tx0
    objective = evaluator.objective(which, fixed_other)

    def counted(run: Callable[[], tuple[LocalPosition, StageTrace]]) -> LocalPosition:
        before = evaluator.eval_count
        best, trace = run()
        stages.append(replace(trace, eval_count=evaluator.eval_count - before))
        return best

    coarse = counted(lambda: coarse_grid_stage(objective, p0, cfg, which, executor))
    fine = counted(lambda: fine_grid_stage(objective, coarse, p0, cfg, which, executor))
    refined = counted(lambda: powell_stage(objective, fine, p0, cfg, which))

    if objective(incumbent).total < objective(refined).total:
        return incumbent
    return refined


@contextmanager
def _worker_pool(workers: int) -> Iterator[Executor | None]:
    if workers <= 1:
        yield None
        return
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="calibrate") as pool:
        yield pool


def calibrate(
    tx0: LocalPosition,
    rx0: LocalPosition,
    model: ForwardModel,
    meas: PowerDelayProfile,
    cfg: OptimizerConfig | None = None,
    weights: LossWeights | None = None,
    *,
    bin_width_ns: float | None = None,
    cutoff_dbm: float = MIN_PATH_POWER_DBM,
    max_extent_ns: float = MAX_EXTENT_NS,
    smoothing_ns: float = 0.0,
    workers: int = 1,
    on_iteration: Callable[[IterationTrace], None] | None = None,
) -> CalibrationResult:
    """Calibrate TX and RX positions against a measured PDP.

    Iterates RX-then-TX subproblems until both endpoints move less than
    epsilon_m and the relative loss change drops below rel_loss_tol, or
    n_max_iters is reached. When the evaluation budget runs out, the best
    pair evaluated so far is returned with converged=False.

    Args:
        tx0: Initial TX position
        rx0: Initial RX position
        model: Forward model (must tolerate concurrent calls when workers > 1)
        meas: Measured profile
        cfg: Optimizer configuration
        weights: Loss weights
        bin_width_ns: Synthesis bin width (defaults to the measured grid's)
        cutoff_dbm: Path power cutoff for synthesis
        max_extent_ns: Simulated profiles are clamped to this extent
        smoothing_ns: Gaussian delay smoothing of simulated profiles (0 = none)
        workers: Threads for grid-stage evaluation
        on_iteration: Called after every completed iteration

    Returns:
        Calibration result with full per-stage traces

    Raises:
        GeometryError: An initial position is invalid for the forward model
    """
    cfg = cfg or OptimizerConfig()
    evaluator = LossEvaluator(
        model,
        meas,
        tx0,
        rx0,
        weights=weights,
        eval_budget=cfg.eval_budget,
        bin_width_ns=bin_width_ns,
        cutoff_dbm=cutoff_dbm,
        max_extent_ns=max_extent_ns,
        window_ns=cfg.align_window_ns,
        smoothing_ns=smoothing_ns,
    )
    initial = evaluator.evaluate(tx0, rx0, strict=True)

    tx, rx, current = tx0, rx0, initial
    iterations: list[IterationTrace] = []
    converged = False
    exhausted = False

    with _worker_pool(workers) as executor:
        try:
            for iteration in range(1, cfg.n_max_iters + 1):
                tx_prev, rx_prev, prev_total = tx, rx, current.total
                stages: list[StageTrace] = []
                try:
                    rx = _solve_subproblem(evaluator, "RX", rx, tx, cfg, executor, stages)
                    tx = _solve_subproblem(evaluator, "TX", tx, rx, cfg, executor, stages)
                except EvaluationBudgetExceeded:
                    iterations.append(
                        IterationTrace(iteration, tx, rx, current, stages, complete=False)
                    )
                    raise
                current = evaluator.evaluate(tx, rx)

                trace = IterationTrace(iteration, tx, rx, current, stages)
                iterations.append(trace)
                if on_iteration is not None:
                    on_iteration(trace)

                moved = max(tx.horizontal_distance_to(tx_prev), rx.horizontal_distance_to(rx_prev))
                rel_change = abs(current.total - prev_total) / prev_total if prev_total > 0 else 0.0
                if moved < cfg.epsilon_m and rel_change < cfg.rel_loss_tol:
                    converged = True
                    break
        except EvaluationBudgetExceeded:
            exhausted = True
            tx, rx = evaluator.best_pair()
            current = evaluator.evaluate(tx, rx)

    return CalibrationResult(
        tx_initial=tx0,
        rx_initial=rx0,
        tx_star=tx,
        rx_star=rx,
        initial_loss=initial,
        final_loss=current,
        iterations=iterations,
        eval_count=evaluator.eval_count,
        converged=converged,
        budget_exhausted=exhausted,
    )
