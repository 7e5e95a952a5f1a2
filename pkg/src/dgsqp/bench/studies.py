"""Monte-Carlo studies: success rates, ablations, regularization grid, MSE comparison.

Every study is a pure function of (scenario, seed) apart from wall times.
Solves are independent; with ``parallel > 1`` they run in spawned worker
processes and results are collected in submission order, so the output does
not depend on scheduling.
"""

from __future__ import annotations

import logging
import math
import multiprocessing
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from dgsqp.game import DynamicGame, GameError, rollout
from dgsqp.racing.games import agent_progress
from dgsqp.racing.sampling import SamplingError, record_seed
from dgsqp.solver import STATUSES, SolverConfig, solve

from .scenario import Scenario

log = logging.getLogger(__name__)

RECORD_STATUSES = STATUSES + ("sampling_error",)
# solver settings of each ablation, applied on top of the scenario's config
VARIANTS = {
    "full": {},
    "ablate-merit": {"merit": "cost_sum"},
    "ablate-linesearch": {"max_d_steps": 0, "merit_memory": 1},
}
DEFAULT_EPS0 = (0.0, 0.1, 1.0, 10.0, 1000.0)
DEFAULT_ETA = (0.5, 0.65, 0.8, 0.95, 1.0)


@dataclass
class StudyRecord:
    scenario: str
    ic_index: int
    seed: int
    variant: str
    model: str
    formulation: str
    horizon: int
    eps0: float
    eta: float
    status: str
    iterations: int
    wall_time: float
    stationarity: float
    feasibility: float
    complementarity: float
    solution: str = ""

    def __post_init__(self):
        if self.status not in RECORD_STATUSES:
            raise ValueError(f"unknown status {self.status!r}")

    @property
    def converged(self) -> bool:
        return self.status == "converged"


RECORD_FIELDS = tuple(f.name for f in fields(StudyRecord))


@dataclass
class Study:
    kind: str
    scenario: str
    seed: int
    records: list[StudyRecord]
    summary: dict = field(default_factory=dict)


@dataclass
class GridCell:
    eps0: float
    eta: float
    success_rate: float
    n: int


@dataclass
class GridStudy(Study):
    cells: list[GridCell] = field(default_factory=list)

    def matrix(self, eps0: Sequence[float], eta: Sequence[float]) -> np.ndarray:
        """Success rates with rows over ``eps0`` and columns over ``eta``."""
        lookup = {(c.eps0, c.eta): c.success_rate for c in self.cells}
        return np.array([[lookup[(e, h)] for h in eta] for e in eps0], dtype=float)


@dataclass
class MseReport:
    scenario: str
    model: str
    horizon: int
    ic_indices: list[int]
    mse: list[float]
    agreement: list[bool]
    substituted: bool = False  # kinematic batch used because the dynamic one had too few joint successes
    records: list[StudyRecord] = field(default_factory=list)

    def _stat(self, fn) -> float:
        return float(fn(self.mse)) if self.mse else math.nan

    @property
    def min(self) -> float:
        return self._stat(np.min)

    @property
    def median(self) -> float:
        return self._stat(np.median)

    @property
    def mean(self) -> float:
        return self._stat(np.mean)

    @property
    def agreement_rate(self) -> float:
        return float(np.mean(self.agreement)) if self.agreement else math.nan

    def summary(self) -> dict:
        return {
            "model": self.model, "horizon": self.horizon, "joint": len(self.mse),
            "substituted": self.substituted, "min": self.min, "median": self.median,
            "mean": self.mean, "agreement_rate": self.agreement_rate,
        }


def success_count(records: Iterable[StudyRecord]) -> int:
    return sum(r.converged for r in records)


def success_rate(records: Sequence[StudyRecord]) -> float | str:
    return success_count(records) / len(records) if records else "n/a"


def variant_config(base: SolverConfig, variant: str) -> SolverConfig:
    if variant not in VARIANTS:
        raise ValueError(f"unknown solver variant {variant!r}")
    return base.replace(**VARIANTS[variant])


# -- metrics ----------------------------------------------------------------------


def normalized_mse(exact: DynamicGame, u_exact, approx: DynamicGame, u_approx) -> float:
    """(1/N) sum_k sum_i ||u_hat_k[:2] - u_k||^2 weighted by 1 / u_u per input.

    The arcspeed input of the approximate game is dropped; the weights are the
    upper input bounds (acceleration, steering) of each vehicle.
    """
    N = exact.dims.horizon
    if approx.dims.horizon != N or approx.dims.num_agents != exact.dims.num_agents:
        raise ValueError("games must share horizon and agent count")
    u_exact, u_approx = np.asarray(u_exact), np.asarray(u_approx)
    total = 0.0
    for i in range(exact.dims.num_agents):
        a = u_exact[exact.dims.agent_slice(i)].reshape(N, -1)[:, :2]
        b = u_approx[approx.dims.agent_slice(i)].reshape(N, -1)[:, :2]
        scale = np.abs(exact.info["params"][i].u_upper)
        total += float(np.sum((b - a) ** 2 / scale))
    return total / N


def finish_order(game: DynamicGame, u) -> tuple[int, ...]:
    """Agents sorted by progress at the end of the horizon, leader first.

    Progress is measured relative to agent 0's start, with starting gaps
    wrapped on closed tracks.
    """
    prog = agent_progress(game, rollout(game, u).states)
    track = game.info["track"]
    start = prog[0] - prog[0, 0]
    if track.closed:
        L = track.length
        start = (start + L / 2) % L - L / 2
    lead = start + prog[-1] - prog[0]
    return tuple(int(i) for i in np.argsort(-lead, kind="stable"))


# -- task execution ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SolveTask:
    scenario: Scenario
    x0: np.ndarray
    ic_index: int
    seed: int
    horizon: int
    formulation: str
    model: str
    variant: str
    config: SolverConfig
    keep_solution: bool = False


@dataclass
class TaskResult:
    record: StudyRecord
    u: np.ndarray | None = None
    order: tuple[int, ...] | None = None


def _record(task: SolveTask, status: str, iterations=0, wall=0.0, res=(math.nan,) * 3) -> StudyRecord:
    return StudyRecord(
        task.scenario.id, task.ic_index, task.seed, task.variant, task.model, task.formulation,
        task.horizon, task.config.eps0, task.config.eta, status, int(iterations), float(wall),
        float(res[0]), float(res[1]), float(res[2]),
    )


def run_task(task: SolveTask) -> TaskResult:
    """One solve; failures become records instead of exceptions."""
    t0 = time.perf_counter()
    try:
        game = task.scenario.build(task.x0, task.horizon, task.formulation, task.model)
    except GameError as exc:
        log.warning("IC %d rejected by the game builder: %s", task.ic_index, exc)
        return TaskResult(_record(task, "sampling_error"))
    try:
        u0 = task.scenario.warm_start(game)
        result = solve(game, u0, task.config)
    except Exception as exc:  # isolation: never abort the batch
        log.warning("IC %d solve raised %s: %s", task.ic_index, type(exc).__name__, exc)
        return TaskResult(_record(task, "qp_failure", wall=time.perf_counter() - t0))
    r = result.residuals
    rec = _record(
        task, result.status, result.iterations, result.wall_time,
        (r.stationarity, r.feasibility, r.complementarity),
    )
    log.info(
        "%s %s N=%d IC %d: %s after %d iterations (%.1f s)",
        task.variant, task.formulation, task.horizon, task.ic_index, result.status,
        result.iterations, result.wall_time,
    )
    if task.keep_solution and result.converged:
        return TaskResult(rec, result.u, finish_order(game, result.u))
    return TaskResult(rec)


def run_tasks(tasks: Sequence[SolveTask], parallel: int = 1) -> list[TaskResult]:
    if parallel <= 1 or len(tasks) <= 1:
        return [run_task(t) for t in tasks]
    ctx = multiprocessing.get_context("spawn")  # JAX is not fork-safe
    with ProcessPoolExecutor(max_workers=parallel, mp_context=ctx) as pool:
        return list(pool.map(run_task, tasks))


def _sample(scenario: Scenario, count: int, seed: int, model: str):
    try:
        return scenario.sample(count, seed, model)
    except SamplingError as exc:
        log.error("sampling failed: %s", exc)
        return None


def _tasks(scenario, ics, seed, horizon, formulation, model, variant, config, keep=False):
    return [
        SolveTask(scenario, x0, k, record_seed(seed, k), horizon, formulation, model, variant, config, keep)
        for k, x0 in enumerate(ics)
    ]


def _sampling_failures(scenario, count, seed, horizon, formulation, model, variant, config):
    dummy = _tasks(scenario, [None] * count, seed, horizon, formulation, model, variant, config)
    return [_record(t, "sampling_error") for t in dummy]


def _save_solutions(results: list[TaskResult], directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for res in results:
        if res.u is None:
            continue
        r = res.record
        name = f"{r.scenario}_{r.variant}_{r.formulation}_N{r.horizon}_ic{r.ic_index}.npy"
        np.save(directory / name, res.u)
        r.solution = name


# -- studies ----------------------------------------------------------------------


def _batch(scenario, count, seed, horizon, formulation, model, variant, config, parallel, keep=False):
    ics = _sample(scenario, count, seed, model)
    if ics is None:
        recs = _sampling_failures(scenario, count, seed, horizon, formulation, model, variant, config)
        return [TaskResult(r) for r in recs]
    tasks = _tasks(scenario, ics, seed, horizon, formulation, model, variant, config, keep)
    return run_tasks(tasks, parallel)


def run_success_study(
    scenario: Scenario,
    count: int = 50,
    horizons: Sequence[int] | None = None,
    formulation: str | None = None,
    seed: int | None = None,
    parallel: int = 1,
    solutions_dir: str | Path | None = None,
) -> Study:
    """Success rate per horizon over ``count`` sampled initial conditions."""
    seed = scenario.seed if seed is None else seed
    horizons = tuple(horizons or scenario.horizons)
    formulation = formulation or scenario.formulation
    records, summary = [], {}
    for N in horizons:
        results = _batch(
            scenario, count, seed, N, formulation, scenario.model, "full", scenario.solver,
            parallel, keep=solutions_dir is not None,
        )
        if solutions_dir is not None:
            _save_solutions(results, Path(solutions_dir))
        recs = [r.record for r in results]
        records += recs
        summary[f"N={N}"] = {"n": len(recs), "converged": success_count(recs), "success_rate": success_rate(recs)}
    return Study("success", scenario.id, seed, records, summary)


def run_ablation(
    scenario: Scenario,
    count: int = 20,
    horizon: int | None = None,
    variants: Sequence[str] = tuple(VARIANTS),
    seed: int | None = None,
    parallel: int = 1,
) -> Study:
    """Success counts of the full solver and its ablations on one IC batch."""
    seed = scenario.seed if seed is None else seed
    N = horizon or max(scenario.horizons)
    records, summary = [], {}
    for variant in variants:
        config = variant_config(scenario.solver, variant)
        recs = [r.record for r in _batch(scenario, count, seed, N, scenario.formulation, scenario.model, variant, config, parallel)]
        records += recs
        summary[variant] = {"n": len(recs), "converged": success_count(recs), "success_rate": success_rate(recs)}
    return Study("ablation", scenario.id, seed, records, summary)


def run_regularization_grid(
    scenario: Scenario,
    eps0: Sequence[float] = DEFAULT_EPS0,
    eta: Sequence[float] = DEFAULT_ETA,
    count: int = 20,
    horizon: int | None = None,
    seed: int | None = None,
    parallel: int = 1,
) -> GridStudy:
    """Success rate for every (eps0, eta) pair on one IC batch."""
    if not eps0 or not eta:
        raise ValueError("eps0 and eta grids must be non-empty")
    seed = scenario.seed if seed is None else seed
    N = horizon or max(scenario.horizons)
    ics = _sample(scenario, count, seed, scenario.model)
    records, cells = [], []
    for e in eps0:
        for h in eta:
            config = scenario.solver.replace(eps0=float(e), eta=float(h))
            if ics is None:
                recs = _sampling_failures(scenario, count, seed, N, scenario.formulation, scenario.model, "full", config)
            else:
                tasks = _tasks(scenario, ics, seed, N, scenario.formulation, scenario.model, "full", config)
                recs = [r.record for r in run_tasks(tasks, parallel)]
            records += recs
            rate = success_rate(recs)
            cells.append(GridCell(float(e), float(h), rate if recs else math.nan, len(recs)))
    summary = {f"eps0={c.eps0:g},eta={c.eta:g}": c.success_rate for c in cells}
    return GridStudy("reggrid", scenario.id, seed, records, summary, cells)


def _mse_batch(scenario, count, seed, N, model, parallel):
    ics = _sample(scenario, count, seed, model)
    if ics is None:
        return [], [], [], []
    by_form = {}
    records = []
    for form in ("exact", "approximate"):
        tasks = _tasks(scenario, ics, seed, N, form, model, "full", scenario.solver, keep=True)
        results = run_tasks(tasks, parallel)
        by_form[form] = results
        records += [r.record for r in results]
    idx, mse, agree = [], [], []
    for k, x0 in enumerate(ics):
        ex, ap = by_form["exact"][k], by_form["approximate"][k]
        if ex.u is None or ap.u is None:
            continue
        g_ex = scenario.build(x0, N, "exact", model)
        g_ap = scenario.build(x0, N, "approximate", model)
        idx.append(k)
        mse.append(normalized_mse(g_ex, ex.u, g_ap, ap.u))
        agree.append(ex.order[0] == ap.order[0])
    return idx, mse, agree, records


def run_mse_comparison(
    scenario: Scenario,
    count: int = 20,
    horizon: int | None = None,
    seed: int | None = None,
    parallel: int = 1,
    min_joint: int = 5,
    substitute: str | None = "kinematic",
) -> MseReport:
    """Normalized input MSE between exact and approximate equilibria.

    Both formulations are solved on the same batch; only jointly converged
    initial conditions enter the report. If fewer than ``min_joint`` converge
    jointly, the batch is redrawn for the ``substitute`` model.
    """
    seed = scenario.seed if seed is None else seed
    N = horizon or max(scenario.horizons)
    idx, mse, agree, records = _mse_batch(scenario, count, seed, N, scenario.model, parallel)
    model, substituted = scenario.model, False
    if len(mse) < min_joint and substitute and substitute != scenario.model:
        log.warning("only %d joint successes for the %s model; using %s agents", len(mse), model, substitute)
        idx, mse, agree, sub_records = _mse_batch(scenario, count, seed, N, substitute, parallel)
        records += sub_records
        model, substituted = substitute, True
    if not mse:
        warnings.warn("no initial condition converged under both formulations", RuntimeWarning, stacklevel=2)
    return MseReport(scenario.id, model, N, idx, mse, agree, substituted, records)
