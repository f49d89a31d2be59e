"""Analytical cost of running DSVRG at a given data-aggregation level.

The grouping level ``gamma`` is the number of source devices feeding one
collection point (CP): ``gamma = m0 / m1``.  ``gamma = 1`` keeps every device's
data in place, ``gamma = m0`` centralises everything on one node.

All cost functions accept scalars or numpy arrays for ``gamma`` so that whole
curves can be evaluated in one call.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.optimize import brentq

INV_PHI = (math.sqrt(5) - 1) / 2

SCAN_POINTS = 64
# Bracket expansion factor and hard limit when the stationary point lies
# outside [1, m0].
EXPAND = 4.0
EXPAND_LIMIT = 1e12


class ConfigError(ValueError):
    """Raised for a parameter set that violates its documented ranges."""


@dataclass(frozen=True)
class SystemConfig:
    """All parameters of the analytical cost model.

    ``theta`` is the cost (Eu) of transmitting one feature or weight, ``mu``
    the compute/communication ratio so that one FLOP costs ``theta * mu``.
    """

    m0: int = 400
    n0: float = 112
    d: int = 54
    omega: int = 54
    kappa: float = 518.0
    epsilon: float = 1e-5
    theta: float = 1.0
    mu: float = 1e-4
    alpha: float = 1.0
    tau: float = 54.0

    def __post_init__(self):
        checks = [
            (self.m0 >= 1, "m0 must be >= 1"),
            (self.n0 >= 1, "n0 must be >= 1"),
            (self.d >= 1, "d must be >= 1"),
            (self.omega >= 1, "omega must be >= 1"),
            (self.kappa > 0, "kappa must be > 0"),
            (0 < self.epsilon < 1, "epsilon must lie in (0, 1)"),
            (self.theta >= 0, "theta must be >= 0"),
            (self.mu >= 0, "mu must be >= 0"),
            (self.alpha > 0, "alpha must be > 0"),
            (self.tau >= 1, "tau must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def beta(self) -> float:
        return self.theta * self.mu

    @property
    def log_inv_eps(self) -> float:
        return math.log2(1.0 / self.epsilon)

    @property
    def total_points(self) -> float:
        return self.m0 * self.n0

    def m1(self, gamma):
        return self.m0 / gamma

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class CostBreakdown:
    gamma: float
    m1: float
    rounds: float
    traffic_algorithm: float
    traffic_data: float
    cost_network: float
    cost_compute: float
    cost_total: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class OptimumReport:
    """Result of minimising the total cost over the aggregation level.

    ``gamma_unclamped`` is the stationary point of C over (0, inf) and may lie
    outside [1, m0] (``inf`` when the cost keeps falling).  ``gamma_hat`` is
    its clamp into [1, m0]; ``m1_hat``/``gamma_snapped`` the cheaper of the
    two neighbouring integer CP counts.
    """

    gamma_unclamped: float
    gamma_hat: float
    m1_hat: int
    gamma_snapped: float
    cost_at_hat: float
    cost_at_snapped: float
    method: str
    clamped: str | None = None
    unimodal: bool = True

    def as_dict(self) -> dict:
        out = asdict(self)
        if math.isinf(out["gamma_unclamped"]):
            out["gamma_unclamped"] = "inf"
        return out


def rounds_model(gamma, cfg: SystemConfig):
    """Rounds DSVRG needs for eps-accuracy: (1 + kappa / n1) * log2(1/eps)."""
    if np.ndim(gamma):
        gamma = np.asarray(gamma, dtype=float)
    return (1.0 + cfg.kappa / (gamma * cfg.n0)) * cfg.log_inv_eps


def traffic_per_round(m1, omega):
    return 2 * (m1 - 1) * omega


def algorithm_traffic(gamma, cfg: SystemConfig, rounds=None):
    """Feature units exchanged by the learning algorithm.

    ``rounds`` overrides the model round count (used with measured rounds).
    """
    if rounds is None:
        rounds = rounds_model(gamma, cfg)
    return traffic_per_round(cfg.m1(gamma), cfg.omega) * rounds


def data_traffic(gamma, cfg: SystemConfig):
    """Feature units moved to the CPs: every non-CP device ships n0 * d."""
    return (cfg.m0 - cfg.m1(gamma)) * cfg.n0 * cfg.d


def compute_ops(gamma, cfg: SystemConfig, rounds=None):
    # n1 * (m1 + 1) == n0 * (m0 + gamma)
    if rounds is None:
        rounds = rounds_model(gamma, cfg)
    return cfg.tau * cfg.n0 * (cfg.m0 + gamma) * rounds


def compute_cost(gamma, cfg: SystemConfig, rounds=None):
    """Eu spent on gradient FLOPs, priced at beta * gamma**alpha per FLOP."""
    return cfg.beta * np.power(gamma, cfg.alpha) * compute_ops(gamma, cfg, rounds)


def total_cost(gamma: float, cfg: SystemConfig) -> CostBreakdown:
    gamma = float(gamma)
    rounds = float(rounds_model(gamma, cfg))
    c_a = float(algorithm_traffic(gamma, cfg, rounds))
    c_d = float(data_traffic(gamma, cfg))
    c_n = cfg.theta * (c_a + c_d)
    c_p = float(compute_cost(gamma, cfg, rounds))
    return CostBreakdown(
        gamma=gamma,
        m1=cfg.m0 / gamma,
        rounds=rounds,
        traffic_algorithm=c_a,
        traffic_data=c_d,
        cost_network=c_n,
        cost_compute=c_p,
        cost_total=c_n + c_p,
    )


def cost_value(gamma, cfg: SystemConfig):
    """Total cost only; vectorised over ``gamma``."""
    rounds = rounds_model(gamma, cfg)
    network = cfg.theta * (algorithm_traffic(gamma, cfg, rounds) + data_traffic(gamma, cfg))
    return network + compute_cost(gamma, cfg, rounds)


def cost_derivative(gamma, cfg: SystemConfig):
    """Analytic dC/dgamma, valid for any gamma > 0."""
    g = np.asarray(gamma, dtype=float) if np.ndim(gamma) else float(gamma)
    m, n, L = cfg.m0, cfg.n0, cfg.log_inv_eps
    r = (1.0 + cfg.kappa / (g * n)) * L
    dr = -cfg.kappa * L / (n * g * g)
    d_alg = 2 * cfg.omega * (-(m / (g * g)) * r + (m / g - 1) * dr)
    d_data = m * n * cfg.d / (g * g)
    ga = np.power(g, cfg.alpha)
    d_comp = cfg.beta * cfg.tau * n * (
        cfg.alpha * ga / g * (m + g) * r + ga * r + ga * (m + g) * dr
    )
    return cfg.theta * (d_alg + d_data) + d_comp


def closed_form_network_optimum(cfg: SystemConfig) -> float:
    """Stationary point of the network-only cost (beta = 0).

    Returns ``inf`` when the denominator is not positive: the network cost is
    then decreasing everywhere and the optimum sits at the upper boundary.
    """
    L = cfg.log_inv_eps
    m, n, k, w = cfg.m0, cfg.n0, cfg.kappa, cfg.omega
    den = cfg.d * m * n * n + 2 * k * L * w - 2 * L * m * n * w
    if den <= 0:
        return math.inf
    return 4 * k * L * m * w / den


def golden_section(f, a: float, b: float, tol: float = 1e-12, max_iter: int = 200):
    """Minimise a unimodal ``f`` on [a, b]; returns the final midpoint."""
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _polish(cfg: SystemConfig, lo: float, hi: float, guess: float) -> float:
    """Refine a golden-section estimate to the root of the analytic derivative."""
    d_lo, d_hi = cost_derivative(lo, cfg), cost_derivative(hi, cfg)
    if d_lo < 0 < d_hi:
        return brentq(lambda g: cost_derivative(g, cfg), lo, hi, xtol=1e-15 * hi, rtol=1e-15, maxiter=200)
    return guess


def _expand(cfg: SystemConfig, start: float, direction: int) -> tuple[float, float] | None:
    """Walk geometrically from ``start`` until the derivative changes sign."""
    g = start
    for _ in range(200):
        nxt = g * EXPAND if direction > 0 else g / EXPAND
        if nxt > cfg.m0 * EXPAND_LIMIT or nxt < 1.0 / EXPAND_LIMIT:
            return None
        slope = cost_derivative(nxt, cfg)
        if (direction > 0 and slope > 0) or (direction < 0 and slope < 0):
            return (g, nxt) if direction > 0 else (nxt, g)
        g = nxt
    return None


def _minimise_in(cfg: SystemConfig, lo: float, hi: float) -> float:
    f = lambda x: float(cost_value(math.exp(x), cfg))
    guess = math.exp(golden_section(f, math.log(lo), math.log(hi)))
    return _polish(cfg, lo, hi, guess)


def _stationary_point(cfg: SystemConfig) -> tuple[float, bool]:
    if cfg.m0 == 1:
        slope = cost_derivative(1.0, cfg)
        if slope == 0:
            return 1.0, True
        bracket = _expand(cfg, 1.0, -1 if slope > 0 else +1)
        if bracket is None:
            return (0.0 if slope > 0 else math.inf), True
        return _minimise_in(cfg, *bracket), True

    grid = np.geomspace(1.0, cfg.m0, SCAN_POINTS)
    values = cost_value(grid, cfg)
    if np.ptp(values) == 0.0:
        return 1.0, True
    diffs = np.sign(np.diff(values))
    diffs = diffs[diffs != 0]
    # one descent followed by one ascent (either part may be empty)
    unimodal = bool(np.count_nonzero(np.diff(diffs) != 0) <= 1 and (diffs.size == 0 or diffs[0] <= diffs[-1]))
    i = int(np.argmin(values))

    if 0 < i < grid.size - 1:
        return _minimise_in(cfg, grid[i - 1], grid[i + 1]), unimodal
    edge = grid[i]
    if i == 0 and cost_derivative(edge, cfg) > 0:
        bracket = _expand(cfg, edge, -1)
        if bracket is None:
            return 0.0, unimodal
        return _minimise_in(cfg, *bracket), unimodal
    if i == grid.size - 1 and cost_derivative(edge, cfg) < 0:
        bracket = _expand(cfg, edge, +1)
        if bracket is None:
            return math.inf, unimodal
        return _minimise_in(cfg, *bracket), unimodal
    # scan minimum at an edge but the slope points inward: refine next to it
    j = 1 if i == 0 else grid.size - 2
    lo, hi = sorted((edge, grid[j]))
    return _minimise_in(cfg, lo, hi), unimodal


def clamp_gamma(gamma: float, m0: int) -> float:
    if gamma < 1:
        return 1.0
    if gamma > m0:
        return float(m0)
    return float(gamma)


def snap_m1(gamma: float, cfg: SystemConfig) -> int:
    """Cheaper of the two integer CP counts around m0 / gamma; ties go to more CPs."""
    target = cfg.m0 / gamma
    candidates = {min(cfg.m0, max(1, math.floor(target))), min(cfg.m0, max(1, math.ceil(target)))}
    return min(candidates, key=lambda m1: (float(cost_value(cfg.m0 / m1, cfg)), -m1))


def _report(cfg: SystemConfig, gamma_tilde: float, method: str, unimodal: bool = True) -> OptimumReport:
    gamma_hat = clamp_gamma(gamma_tilde, cfg.m0)
    clamped = "lower" if gamma_tilde < 1 else "upper" if gamma_tilde > cfg.m0 else None
    m1 = snap_m1(gamma_hat, cfg)
    return OptimumReport(
        gamma_unclamped=float(gamma_tilde),
        gamma_hat=gamma_hat,
        m1_hat=m1,
        gamma_snapped=cfg.m0 / m1,
        cost_at_hat=float(cost_value(gamma_hat, cfg)),
        cost_at_snapped=float(cost_value(cfg.m0 / m1, cfg)),
        method=method,
        clamped=clamped,
        unimodal=unimodal,
    )


def numeric_optimum(cfg: SystemConfig) -> OptimumReport:
    """Minimise the total cost numerically and clamp the result into [1, m0].

    A 64-point log-spaced scan over [1, m0] locates the basin; golden-section
    search (in log gamma) narrows it and a derivative root-find polishes the
    estimate.  When the scan minimum sits on a boundary with the slope
    pointing outward, the bracket is grown geometrically so the unclamped
    stationary point is still reported.
    """
    gamma_tilde, unimodal = _stationary_point(cfg)
    return _report(cfg, gamma_tilde, "numeric", unimodal)


def closed_form_report(cfg: SystemConfig) -> OptimumReport:
    return _report(cfg, closed_form_network_optimum(cfg), "closed_form_network")


def derivative_sign_profile(cfg: SystemConfig, gamma_grid, rel_step: float = 1e-6) -> list[int]:
    """Sign of dC/dgamma at each grid point, by central finite differences."""
    grid = np.asarray(gamma_grid, dtype=float)
    h = rel_step * grid
    slope = (cost_value(grid + h, cfg) - cost_value(grid - h, cfg)) / (2 * h)
    return [int(s) for s in np.sign(slope)]


def sign_changes(signs) -> list[int]:
    """Indices i where the sign flips between grid points i and i+1 (zeros skipped)."""
    out = []
    prev_i, prev = None, 0
    for i, s in enumerate(signs):
        if s == 0:
            continue
        if prev and s != prev:
            out.append(prev_i)
        prev_i, prev = i, s
    return out


def kappa_convention(n_points: float, d: int) -> float:
    """Condition-number heuristic sqrt(N * d); never applied implicitly."""
    if n_points < 1:
        raise ConfigError("n_points must be >= 1")
    return math.sqrt(n_points * d)


def feasible_gammas(m0: int) -> list[float]:
    """Every realisable level m0/m1, m1 = m0..1, in increasing gamma order."""
    return [m0 / m1 for m1 in range(m0, 0, -1)]


CURVE_COLUMNS = (
    "gamma", "m1", "rounds", "traffic_algorithm", "traffic_data",
    "cost_network", "cost_compute", "cost_total",
)


def cost_curve(cfg: SystemConfig, gammas=None) -> list[CostBreakdown]:
    if gammas is None:
        gammas = feasible_gammas(cfg.m0)
    return [total_cost(g, cfg) for g in gammas]
