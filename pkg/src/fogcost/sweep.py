"""Empirical validation: run DSVRG at every aggregation level and price it."""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from .cost import (
    CostBreakdown,
    OptimumReport,
    SystemConfig,
    data_traffic,
    numeric_optimum,
)
from .data import LabeledDataset, ShardSet, regroup
from .dsvrg import DivergenceError, LearnerConfig, TrainingTrace, run_dsvrg

log = logging.getLogger(__name__)

SENSITIVITY_AXES = ("n0", "m0", "mu", "alpha")


class UnconvergedTraceError(ValueError):
    pass


def empirical_cost(
    trace: TrainingTrace,
    gamma: float,
    cfg: SystemConfig,
    allow_unconverged: bool = False,
    moved_points: int | None = None,
) -> CostBreakdown:
    """Price a measured run with the same formulas the model uses.

    Data-collection traffic follows the model's (m0 - m1) * n0 * d unless the
    measured ``moved_points`` is given.
    """
    if not trace.converged and not allow_unconverged:
        raise UnconvergedTraceError("trace did not reach the target accuracy")
    c_d = float(data_traffic(gamma, cfg)) if moved_points is None else float(moved_points * cfg.d)
    c_a = float(trace.messages)
    c_n = cfg.theta * (c_a + c_d)
    c_p = cfg.beta * gamma**cfg.alpha * trace.flops
    return CostBreakdown(
        gamma=float(gamma),
        m1=cfg.m0 / gamma,
        rounds=float(trace.rounds),
        traffic_algorithm=c_a,
        traffic_data=c_d,
        cost_network=c_n,
        cost_compute=c_p,
        cost_total=c_n + c_p,
    )


def ci_half_width(values, level: float = 0.95) -> float:
    """Student-t half-width of the mean's confidence interval."""
    n = len(values)
    if n < 2:
        return 0.0
    sd = float(np.std(values, ddof=1))
    return float(stats.t.ppf(0.5 + level / 2, n - 1) * sd / math.sqrt(n))


@dataclass
class SweepRow:
    gamma: float
    m1: int
    replications: int
    failures: int
    rounds_mean: float
    rounds_ci: float
    cost_network_mean: float
    cost_network_ci: float
    cost_compute_mean: float
    cost_compute_ci: float
    cost_total_mean: float
    cost_total_ci: float


SWEEP_COLUMNS = tuple(SweepRow.__dataclass_fields__)


@dataclass
class SweepResult:
    epsilon: float
    m0: int
    rows: list[SweepRow]
    gamma_star: float | None
    gamma_hat: float
    optimum: OptimumReport
    overhead_pct: float | None = None
    gain_vs_decentralised_pct: float | None = None
    gain_vs_centralised_pct: float | None = None
    failures: int = 0

    def row_at(self, gamma: float) -> SweepRow | None:
        m1 = round(self.m0 / gamma)
        for row in self.rows:
            if row.m1 == m1:
                return row
        return None

    def summary(self) -> dict:
        star = self.row_at(self.gamma_star) if self.gamma_star is not None else None
        hat = self.row_at(self.gamma_hat)
        return {
            "epsilon": self.epsilon,
            "gamma_star": self.gamma_star,
            "gamma_hat": self.gamma_hat,
            "rounds_star": star.rounds_mean if star else None,
            "rounds_hat": hat.rounds_mean if hat else None,
            "cost_star": star.cost_total_mean if star else None,
            "cost_hat": hat.cost_total_mean if hat else None,
            "overhead_pct": self.overhead_pct,
            "gain_vs_decentralised_pct": self.gain_vs_decentralised_pct,
            "gain_vs_centralised_pct": self.gain_vs_centralised_pct,
            "failures": self.failures,
            "model_optimum": self.optimum.as_dict(),
        }


def cell_seed(master: int, m1: int, rep: int) -> int:
    """Seed for one (level, replication) cell, independent of execution order."""
    return int(np.random.SeedSequence([master, m1, rep]).generate_state(1)[0])


@dataclass
class _Cell:
    m1: int
    rep: int
    seed: int
    cps: ShardSet = field(repr=False)


def _run_cell(data: LabeledDataset, cell: _Cell, learner: LearnerConfig):
    try:
        trace = run_dsvrg(data, cell.cps, learner, seed=cell.seed)
    except DivergenceError as exc:
        log.warning("m1=%d rep=%d diverged in round %d", cell.m1, cell.rep, exc.round_index)
        return None
    if not trace.converged:
        log.warning("m1=%d rep=%d hit max_rounds=%d", cell.m1, cell.rep, learner.max_rounds)
        return None
    return trace


def _run_cells_star(args):
    return _run_cell(*args)


def _check_feasible(gammas, m0: int) -> list[int]:
    m1s = []
    for g in gammas:
        if not 1 <= g <= m0:
            raise ValueError(f"gamma {g} outside [1, {m0}]")
        m1 = round(m0 / g)
        if not math.isclose(m0 / m1, g, rel_tol=1e-9):
            raise ValueError(f"gamma {g} is not of the form m0/m1 for integer m1")
        m1s.append(m1)
    return m1s


def sweep_gamma(
    data: LabeledDataset,
    devices: ShardSet | list[ShardSet],
    system: SystemConfig,
    learner: LearnerConfig,
    gamma_set=None,
    replications: int = 1,
    seed: int = 0,
    workers: int = 1,
) -> SweepResult:
    """Run DSVRG for every level in ``gamma_set`` and aggregate the costs.

    ``devices`` is either one device partition shared by all replications or
    one partition per replication.  Diverged or capped runs are dropped and
    counted in the row's ``failures``.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    partitions = devices if isinstance(devices, list) else [devices] * replications
    if len(partitions) != replications:
        raise ValueError("need one device partition per replication")
    if any(len(p) != system.m0 for p in partitions):
        raise ValueError(f"device partitions must hold m0={system.m0} shards")
    if gamma_set is None:
        gamma_set = [system.m0 / m1 for m1 in range(system.m0, 0, -1)]
    m1s = sorted(set(_check_feasible(gamma_set, system.m0)), reverse=True)
    learner = replace(learner, epsilon=system.epsilon)

    cells = [
        _Cell(m1, rep, cell_seed(seed, m1, rep), regroup(partitions[rep], system.m0 / m1))
        for m1 in m1s
        for rep in range(replications)
    ]
    jobs = [(data, c, learner) for c in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_run_cells_star, jobs))
    else:
        traces = [_run_cell(*job) for job in jobs]

    rows = []
    for m1 in m1s:
        gamma = system.m0 / m1
        costs = [
            empirical_cost(tr, gamma, system)
            for c, tr in zip(cells, traces)
            if c.m1 == m1 and tr is not None
        ]
        fails = replications - len(costs)
        rows.append(_aggregate(gamma, m1, costs, fails))

    return _finish(rows, system)


def _aggregate(gamma: float, m1: int, costs: list[CostBreakdown], fails: int) -> SweepRow:
    def col(name):
        vals = [getattr(c, name) for c in costs]
        if not vals:
            return math.nan, math.nan
        return float(np.mean(vals)), ci_half_width(vals)

    r, r_ci = col("rounds")
    n, n_ci = col("cost_network")
    p, p_ci = col("cost_compute")
    t, t_ci = col("cost_total")
    return SweepRow(gamma, m1, len(costs), fails, r, r_ci, n, n_ci, p, p_ci, t, t_ci)


def _finish(rows: list[SweepRow], system: SystemConfig) -> SweepResult:
    optimum = numeric_optimum(system)
    valid = [r for r in rows if r.replications > 0]
    star = min(valid, key=lambda r: (r.cost_total_mean, r.gamma)) if valid else None
    result = SweepResult(
        epsilon=system.epsilon,
        m0=system.m0,
        rows=rows,
        gamma_star=star.gamma if star else None,
        gamma_hat=optimum.gamma_snapped,
        optimum=optimum,
        failures=sum(r.failures for r in rows),
    )
    hat = result.row_at(result.gamma_hat)
    if star is not None and hat is not None and hat.replications > 0:
        result.overhead_pct = 100.0 * (hat.cost_total_mean - star.cost_total_mean) / star.cost_total_mean
    if result.row_at(1.0) is not None and result.row_at(system.m0) is not None and hat is not None:
        dec, cen = gain_vs_extremes(result)
        result.gain_vs_decentralised_pct = dec
        result.gain_vs_centralised_pct = cen
    return result


def gain_vs_extremes(result: SweepResult) -> tuple[float, float]:
    """Percentage saved at the model optimum relative to gamma=1 and gamma=m0."""
    lo, hi = result.row_at(1.0), result.row_at(result.m0)
    hat = result.row_at(result.gamma_hat)
    if lo is None or hi is None:
        raise ValueError("sweep lacks the gamma=1 or gamma=m0 row")
    if hat is None:
        raise ValueError(f"sweep lacks the model optimum row gamma={result.gamma_hat}")
    return gain_pct(lo.cost_total_mean, hat.cost_total_mean), gain_pct(hi.cost_total_mean, hat.cost_total_mean)


def gain_pct(reference: float, at_optimum: float) -> float:
    return 100.0 * (reference - at_optimum) / reference


def sensitivity_sweep(base: SystemConfig, axis: str, values, alphas=(0.5, 1.0, 2.0)):
    """Model optimum for each value along ``axis`` and each alpha.

    Returns a list of ``(value, {alpha: OptimumReport})`` in input order.
    Only the varied field changes; kappa stays as configured.
    """
    if axis not in SENSITIVITY_AXES:
        raise ValueError(f"axis must be one of {SENSITIVITY_AXES}")
    values = list(values)
    if not values:
        raise ValueError("no values given")
    if axis == "alpha":
        alphas = (None,)
    table = []
    for v in values:
        cast = int(v) if axis == "m0" else float(v)
        cfg = base.with_(**{axis: cast})
        per_alpha = {}
        for a in alphas:
            run_cfg = cfg if a is None else cfg.with_(alpha=a)
            per_alpha[run_cfg.alpha] = numeric_optimum(run_cfg)
        table.append((cast, per_alpha))
    return table


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def sweep_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for row in result.rows:
        w.writerow([_fmt(v) for v in asdict(row).values()])
    return buf.getvalue()


def plot_data(result: SweepResult) -> str:
    lines = ["# gamma cost_total_mean"]
    lines += [f"{r.gamma!r} {r.cost_total_mean!r}" for r in result.rows if r.replications > 0]
    return "\n".join(lines) + "\n"


SENSITIVITY_COLUMNS = ("axis", "value", "alpha", "gamma_unclamped", "gamma_hat", "m1_hat", "gamma_snapped")


def sensitivity_csv(axis: str, table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SENSITIVITY_COLUMNS)
    for value, per_alpha in table:
        for alpha, rep in per_alpha.items():
            w.writerow([axis, _fmt(value), _fmt(alpha), _fmt(rep.gamma_unclamped), _fmt(rep.gamma_hat), rep.m1_hat, _fmt(rep.gamma_snapped)])
    return buf.getvalue()
