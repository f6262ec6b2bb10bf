"""Closed-form objects of the competitive analysis and their numeric checks.

Contents:

* ``q`` and the Balance SWOR ratio integral :func:`gamma_balance`;
* the potential-function ingredients ``p``, ``alpha``, ``beta`` for a
  parameter ``0 < theta <= 1/2`` and the fixed ``theta = 1/2`` family used
  in the edge-weighted setting (:func:`alpha_half`, :func:`beta_half`);
* potentials and regularization terms, unweighted and edge-weighted;
* verifiers that evaluate the analytic conditions on grids and return a
  :class:`VerifierReport`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "DEFAULT_THETA",
    "PotentialParams",
    "VerifierReport",
    "q",
    "q_prime",
    "adaptive_simpson",
    "gamma_balance",
    "p",
    "p_half",
    "alpha",
    "beta",
    "gamma_swor",
    "alpha_half",
    "beta_half",
    "gamma_half",
    "phi_unweighted",
    "regularization_unweighted",
    "regularization_terms",
    "marginal_weight",
    "EWState",
    "phi_ew",
    "regularization_ew",
    "check_q_condition",
    "check_alpha_beta_odes",
    "check_alpha_beta_bounds",
    "check_potential_monotonicity",
    "MonotonicityReport",
]

DEFAULT_THETA = 0.4254
LN2 = math.log(2.0)
_RHO_SLACK = 1e-9


@dataclass(frozen=True)
class PotentialParams:
    theta: float = DEFAULT_THETA
    inv_theta: float = field(init=False)
    log1m: float = field(init=False)

    def __post_init__(self):
        if not (0.0 < self.theta <= 0.5):
            raise ValueError(f"theta must lie in (0, 1/2], got {self.theta}")
        object.__setattr__(self, "inv_theta", 1.0 / self.theta)
        object.__setattr__(self, "log1m", math.log1p(-self.theta))

    @property
    def decay(self) -> float:
        """``1 - ln(1 - theta)``, the slow rate in ``alpha`` and ``beta``."""
        return 1.0 - self.log1m

    @property
    def denominator(self) -> float:
        return self.inv_theta - 1.0 + self.log1m


def _params(params) -> PotentialParams:
    if params is None:
        return PotentialParams()
    if isinstance(params, PotentialParams):
        return params
    return PotentialParams(float(params))


@dataclass
class VerifierReport:
    check: str
    grid: dict
    max_violation: float
    tolerance: float
    passed: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self))


# ---------------------------------------------------------------------------
# Balance SWOR: q and the ratio integral


def q(y):
    """Upper bound on the probability that an offline vertex stays unmatched."""
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0):
        raise ValueError("q is defined for y >= 0")
    out = np.where(y_arr <= 1.0, np.exp(-y_arr), np.exp(-np.exp(np.minimum(y_arr, 700.0) - 1.0)))
    return float(out) if out.ndim == 0 else out


def q_prime(y):
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0):
        raise ValueError("q is defined for y >= 0")
    e = np.exp(np.minimum(y_arr, 700.0) - 1.0)
    out = np.where(y_arr <= 1.0, -np.exp(-y_arr), -e * np.exp(-e))
    return float(out) if out.ndim == 0 else out


def _q_log_slope(y):
    """``q'(y) / q(y)``: ``-1`` up to 1, ``-e^(y-1)`` beyond."""
    y = np.asarray(y, dtype=float)
    return np.where(y <= 1.0, -1.0, -np.exp(y - 1.0))


def adaptive_simpson(f: Callable[[float], float], a: float, b: float,
                     tol: float = 1e-9, max_depth: int = 60) -> float:
    """Adaptive Simpson quadrature with Richardson correction."""

    def simpson(fa, fm, fb, lo, hi):
        return (hi - lo) / 6.0 * (fa + 4.0 * fm + fb)

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    total = 0.0
    stack = [(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 0)]
    while stack:
        lo, hi, flo, fmid, fhi, whole, eps, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = simpson(flo, flm, fmid, lo, mid)
        right = simpson(fmid, frm, fhi, mid, hi)
        delta = left + right - whole
        if depth >= max_depth or abs(delta) <= 15.0 * eps:
            total += left + right + delta / 15.0
        else:
            stack.append((lo, mid, flo, flm, fmid, left, 0.5 * eps, depth + 1))
            stack.append((mid, hi, fmid, frm, fhi, right, 0.5 * eps, depth + 1))
    return total


def gamma_balance(tol: float = 1e-9, upper: float = 40.0, q_func=None) -> float:
    """``int_0^inf e^-z (1 - q(z)) dz``, truncated at ``upper``.

    ``q_func`` swaps in another unmatched-probability bound (the default is
    :func:`q`); the integral is split at 1 where ``q`` changes branch.
    """
    qf = q if q_func is None else q_func

    def integrand(z):
        return math.exp(-z) * (1.0 - qf(z))

    return adaptive_simpson(integrand, 0.0, 1.0, tol / 2) + adaptive_simpson(integrand, 1.0, upper, tol / 2)


# ---------------------------------------------------------------------------
# Potential ingredients


def p(rho, params=None):
    """``min(rho / theta, 1)`` on ``[0, 1]``."""
    prm = _params(params)
    r = np.asarray(rho, dtype=float)
    if np.any(r < -_RHO_SLACK) or np.any(r > 1.0 + _RHO_SLACK):
        raise ValueError("p is defined on [0, 1]")
    out = np.minimum(np.maximum(r, 0.0) * prm.inv_theta, 1.0)
    return float(out) if out.ndim == 0 else out


def p_half(rho):
    """``min(2 rho, 1)``, the ``theta = 1/2`` case."""
    return p(rho, 0.5)


def _check_t(t):
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise ValueError("t must lie in [0, 1]")
    return t_arr


def _scalar(out):
    return float(out) if np.ndim(out) == 0 else out


def _alpha_raw(t, prm: PotentialParams):
    s = 1.0 - np.asarray(t, dtype=float)
    num = prm.inv_theta * np.exp(-prm.decay * s) - prm.decay * np.exp(-prm.inv_theta * s)
    return 1.0 - num / prm.denominator


def _beta_raw(t, prm: PotentialParams):
    s = 1.0 - np.asarray(t, dtype=float)
    return (np.exp(-prm.decay * s) - np.exp(-prm.inv_theta * s)) / prm.denominator


def alpha(t, params=None):
    """Weight of the remaining LP mass in the potential at time ``t``."""
    return _scalar(_alpha_raw(_check_t(t), _params(params)))


def beta(t, params=None):
    """Weight of the ``p``-transformed remaining match rates at time ``t``."""
    return _scalar(_beta_raw(_check_t(t), _params(params)))


def gamma_swor(theta: float = DEFAULT_THETA) -> float:
    """Competitive ratio guaranteed by the potential argument for ``theta``."""
    prm = _params(theta)
    num = (prm.inv_theta - 1.0) * math.exp(-prm.decay) + prm.log1m * math.exp(-prm.inv_theta)
    return 1.0 - num / prm.denominator


_HALF_A = 1.0 / (math.e * (1.0 - LN2))
_HALF_B = (1.0 + LN2) / (math.e ** 2 * (1.0 - LN2))
_HALF_C = 1.0 / (2.0 * math.e * (1.0 - LN2))
_HALF_D = 1.0 / (math.e ** 2 * (1.0 - LN2))


def _alpha_half_raw(t):
    t = np.asarray(t, dtype=float)
    return 1.0 - _HALF_A * (2.0 * math.e) ** t + _HALF_B * np.exp(2.0 * t)


def _beta_half_raw(t):
    t = np.asarray(t, dtype=float)
    return _HALF_C * (2.0 * math.e) ** t - _HALF_D * np.exp(2.0 * t)


def alpha_half(t):
    return _scalar(_alpha_half_raw(_check_t(t)))


def beta_half(t):
    return _scalar(_beta_half_raw(_check_t(t)))


def gamma_half() -> float:
    """``1 - (1/(2e) - ln 2 / e^2) / (1 - ln 2)``."""
    return 1.0 - (1.0 / (2.0 * math.e) - LN2 / math.e ** 2) / (1.0 - LN2)


# ---------------------------------------------------------------------------
# Unweighted potential and regularization


def _remaining(x, unmatched):
    return np.asarray(x, dtype=float) * np.asarray(unmatched, dtype=bool)[None, :]


def phi_unweighted(x, unmatched, rates, t, params=None) -> float:
    """Potential of the unmatched part of the fractional matching ``x``.

    ``x`` is the dense ``(n_types, n_offline)`` LP solution, ``unmatched`` the
    boolean mask of offline vertices still free at time ``t``.
    """
    prm = _params(params)
    t = float(_check_t(t))
    xt = _remaining(x, unmatched)
    rates = np.asarray(rates, dtype=float)
    rho_i = np.minimum(xt.sum(axis=1) / rates, 1.0)
    return float(_alpha_raw(t, prm) * xt.sum() + _beta_raw(t, prm) * np.dot(rates, p(rho_i, prm)))


def regularization_terms(x, unmatched, rates, t, params=None) -> np.ndarray:
    """Regularization term of every offline vertex (meaningful where unmatched).

    ``unmatched`` may carry leading batch dimensions, with ``t`` of the
    matching batch shape; the result then has shape ``unmatched.shape``.
    """
    prm = _params(params)
    t = _check_t(t)
    rates = np.asarray(rates, dtype=float)
    xt = np.asarray(x, dtype=float) * np.asarray(unmatched, dtype=bool)[..., None, :]
    rho = xt / rates[:, None]
    rho_i = np.minimum(rho.sum(axis=-1), 1.0)
    drop = p(rho_i, prm)[..., None] - p(np.maximum(rho_i[..., None] - rho, 0.0), prm)
    cost_y = (rates[:, None] * drop).sum(axis=-2)
    a = np.asarray(_alpha_raw(t, prm))[..., None]
    b = np.asarray(_beta_raw(t, prm))[..., None]
    return a * xt.sum(axis=-2) + b * cost_y


def regularization_unweighted(j: int, x, unmatched, rates, t, params=None) -> float:
    """Drop of the potential caused by matching the unmatched vertex ``j`` now."""
    if not unmatched[j]:
        raise ValueError(f"offline vertex {j} is already matched")
    return float(regularization_terms(x, unmatched, rates, t, params)[j])


# ---------------------------------------------------------------------------
# Edge-weighted potential (free disposal, theta = 1/2)


def marginal_weight(w_ij, w_j):
    """Gain ``(w_ij - w_j)^+`` of rematching ``j`` through edge ``(i, j)``."""
    out = np.maximum(np.asarray(w_ij, dtype=float) - np.asarray(w_j, dtype=float), 0.0)
    return _scalar(out)


@dataclass(frozen=True)
class EWState:
    """Snapshot of the edge-weighted process at some time.

    ``marginal[i, j]`` is the current marginal weight of edge ``(i, j)`` (zero
    off the edge set).  Unmatched mass at weight level ``w`` is ``x[i, j]``
    when ``w <= marginal[i, j]`` and zero above, so every per-level quantity
    is a step function whose breakpoints are the distinct marginal weights.
    """

    x: np.ndarray
    rates: np.ndarray
    marginal: np.ndarray

    @classmethod
    def from_best_weights(cls, weight_matrix, best, x, rates) -> "EWState":
        wm = np.asarray(weight_matrix, dtype=float)
        marg = np.where(wm > 0, np.maximum(wm - np.asarray(best, dtype=float)[None, :], 0.0), 0.0)
        return cls(np.asarray(x, dtype=float), np.asarray(rates, dtype=float), marg)

    @property
    def rho(self) -> np.ndarray:
        return self.x / self.rates[:, None]

    def breakpoints(self, i: int | None = None) -> np.ndarray:
        """Sorted distinct positive marginal weights (of one type, or all)."""
        m = self.marginal if i is None else self.marginal[i]
        vals = np.unique(m[m > 0])
        return vals

    def X(self) -> float:
        return float((self.marginal * self.x).sum())

    def Y(self) -> float:
        total = 0.0
        rho = self.rho
        for i in range(self.x.shape[0]):
            total += self.rates[i] * _level_integral(rho[i], self.marginal[i], None, 0.0, np.inf)
        return total


def _level_integral(rho_row, marg_row, j, lo, hi) -> float:
    """``int_lo^hi f(w) dw`` for one type, exactly over breakpoint segments.

    With ``j is None``, ``f(w) = p(rho(w))``; otherwise
    ``f(w) = p(rho(w)) - p(rho(w) - rho_j(w))``.  ``rho(w)`` sums the
    ``rho_row`` entries whose marginal weight is at least ``w``.
    """
    hi = min(hi, float(marg_row.max(initial=0.0)))
    if hi <= lo:
        return 0.0
    inner = marg_row[(marg_row > lo) & (marg_row < hi)]
    points = np.concatenate(([lo], np.unique(inner), [hi]))
    total = 0.0
    for a, b in zip(points[:-1], points[1:]):
        live = marg_row >= b
        level = float(rho_row[live].sum())
        val = p_half(min(level, 1.0))
        if j is not None:
            own = rho_row[j] if live[j] else 0.0
            val -= p_half(max(level - own, 0.0))
        total += (b - a) * val
    return total


def phi_ew(state: EWState, t: float) -> float:
    """``alpha(t) X(t) + beta(t) Y(t)`` with the ``theta = 1/2`` functions."""
    t = float(_check_t(t))
    return float(_alpha_half_raw(t) * state.X() + _beta_half_raw(t) * state.Y())


def regularization_ew(i: int, j: int, state: EWState, t: float) -> float:
    """Potential drop if a type-``i`` arrival is matched to ``j`` at time ``t``.

    Sum of the decrease of ``X`` (weighted by ``alpha``) and the decrease of
    ``Y`` (weighted by ``beta``); each ``Y`` integral is evaluated exactly
    over the breakpoint segments of its integrand.
    """
    t = float(_check_t(t))
    m = state.marginal
    gain = m[i, j]
    rho = state.rho
    dec_x = 0.0
    dec_y = 0.0
    for k in range(m.shape[0]):
        if m[k, j] == 0.0:
            continue
        top = m[k, j]
        bottom = max(top - gain, 0.0)
        dec_x += (top - bottom) * state.x[k, j]
        dec_y += state.rates[k] * _level_integral(rho[k], m[k], j, bottom, top)
    return float(_alpha_half_raw(t) * dec_x + _beta_half_raw(t) * dec_y)


# ---------------------------------------------------------------------------
# Verifiers


def check_q_condition(n_z: int = 2001, n_y: int = 2001, y_max: float = 5.0,
                      tolerance: float = 1e-12) -> VerifierReport:
    """Grid check of the inequality that drives the Balance SWOR induction.

    ``z q((y-z)^+) / (1 - z + z q((y-z)^+)) <= exp((1-z) q'(y)/q(y))`` for
    ``z`` in ``[0, 1]`` and ``y`` in ``[0, y_max]``.
    """
    z = np.linspace(0.0, 1.0, n_z)[:, None]
    y = np.linspace(0.0, y_max, n_y)[None, :]
    qz = q(np.maximum(y - z, 0.0))
    lhs = z * qz / (1.0 - z + z * qz)
    rhs = np.exp((1.0 - z) * _q_log_slope(y))
    worst = float((lhs - rhs).max())
    return VerifierReport("q_condition", {"n_z": n_z, "n_y": n_y, "y_max": y_max},
                          worst, tolerance, worst <= tolerance)


def check_alpha_beta_odes(theta: float | None = DEFAULT_THETA, n_points: int = 1001,
                          h: float = 1e-6, tolerance: float = 1e-6) -> VerifierReport:
    """Central-difference check of the first-order system for ``alpha``, ``beta``.

    ``theta=None`` selects the fixed ``theta = 1/2`` closed forms used for
    edge weights (same system with ``theta = 1/2``).  The endpoint
    condition ``alpha(1) = beta(1) = 0`` is folded into the residual.
    """
    t = np.linspace(0.0, 1.0, n_points)
    if theta is None:
        prm = PotentialParams(0.5)
        a_f, b_f = _alpha_half_raw, _beta_half_raw
        name = "alpha_beta_odes_half"
    else:
        prm = PotentialParams(theta)
        a_f = lambda s: _alpha_raw(s, prm)  # noqa: E731
        b_f = lambda s: _beta_raw(s, prm)  # noqa: E731
        name = "alpha_beta_odes"
    da = (a_f(t + h) - a_f(t - h)) / (2 * h)
    db = (b_f(t + h) - b_f(t - h)) / (2 * h)
    a, b = a_f(t), b_f(t)
    res_a = da + prm.decay * prm.inv_theta * b
    res_b = db - (a + (prm.inv_theta + prm.decay) * b - 1.0)
    end = max(abs(float(a_f(1.0))), abs(float(b_f(1.0))))
    worst = float(max(np.abs(res_a).max(), np.abs(res_b).max(), end))
    return VerifierReport(name, {"theta": prm.theta, "n_points": n_points, "h": h},
                          worst, tolerance, worst <= tolerance)


def check_alpha_beta_bounds(theta: float | None = DEFAULT_THETA, n_points: int = 10001,
                            tolerance: float = 1e-12) -> VerifierReport:
    """``alpha + beta / theta <= 1`` and ``alpha, beta >= 0`` on a grid."""
    t = np.linspace(0.0, 1.0, n_points)
    if theta is None:
        a, b, inv = _alpha_half_raw(t), _beta_half_raw(t), 2.0
        th = 0.5
    else:
        prm = PotentialParams(theta)
        a, b, inv = _alpha_raw(t, prm), _beta_raw(t, prm), prm.inv_theta
        th = prm.theta
    worst = float(max((a + inv * b - 1.0).max(), (-a).max(), (-b).max()))
    return VerifierReport("alpha_beta_bounds", {"theta": th, "n_points": n_points},
                          worst, tolerance, worst <= tolerance)


def check_alpha_beta_endpoint(theta: float | None = DEFAULT_THETA,
                              tolerance: float = 1e-12) -> VerifierReport:
    """``alpha(1) = beta(1) = 0``."""
    if theta is None:
        vals, th = (_alpha_half_raw(1.0), _beta_half_raw(1.0)), 0.5
    else:
        prm = PotentialParams(theta)
        vals, th = (_alpha_raw(1.0, prm), _beta_raw(1.0, prm)), prm.theta
    worst = float(max(abs(float(v)) for v in vals))
    return VerifierReport("alpha_beta_endpoint", {"theta": th}, worst, tolerance, worst <= tolerance)


def check_constants() -> list[VerifierReport]:
    """The three headline constants against their published values."""
    out = []
    for name, value, target, tol in (("gamma_balance", gamma_balance(), 0.51304, 1e-4),
                                     ("gamma_swor", gamma_swor(DEFAULT_THETA), 0.7078, 1e-3)):
        dev = abs(value - target)
        out.append(VerifierReport(name, {"value": value, "target": target}, dev, tol, dev <= tol))
    half = gamma_half()
    out.append(VerifierReport("gamma_half", {"value": half, "floor": 0.706},
                              0.706 - half, 0.0, half > 0.706))
    return out


VERIFY_THETAS = (0.3, DEFAULT_THETA, 0.5, None)


def verify_all() -> list[VerifierReport]:
    """Every closed-form and grid check; what the ``verify`` command runs."""
    reports = check_constants()
    reports.append(check_q_condition())
    for th in VERIFY_THETAS:
        reports.append(check_alpha_beta_odes(th))
        reports.append(check_alpha_beta_endpoint(th))
        reports.append(check_alpha_beta_bounds(th))
    return reports


@dataclass
class MonotonicityReport:
    algorithm: str
    times: list
    mean: list
    stderr: list
    flagged: list
    trials: int

    @property
    def passed(self) -> bool:
        return not self.flagged

    def to_json(self) -> str:
        d = asdict(self)
        d["passed"] = self.passed
        return json.dumps(d)


def potential_curve(tg, x, matched_time: np.ndarray, times: np.ndarray, params=None) -> np.ndarray:
    """``ALG(t) + Phi(t)`` per trial (rows) at each grid time (columns)."""
    prm = _params(params)
    x = np.asarray(x, dtype=float)
    rates = np.asarray(tg.rates, dtype=float)
    col_mass = x.sum(axis=0)
    rho = x / rates[:, None]
    out = np.empty((matched_time.shape[0], len(times)))
    for k, t in enumerate(times):
        free = matched_time > t
        alg = (~free).sum(axis=1)
        rho_i = free @ rho.T
        phi = _alpha_raw(t, prm) * (free @ col_mass) + _beta_raw(t, prm) * (p(np.minimum(rho_i, 1.0), prm) @ rates)
        out[:, k] = alg + phi
    return out


def check_potential_monotonicity(tg, x, algorithm: str = "stochastic_swor", trials: int = 100_000,
                                 n_grid: int = 21, seed: int = 0, params=None,
                                 sigmas: float = 3.0) -> MonotonicityReport:
    """Monte-Carlo estimate of ``E[ALG(t) + Phi(t)]`` on a time grid.

    Flags every consecutive pair of grid points where the estimate drops by
    more than ``sigmas`` combined standard errors.
    """
    from .simulate import simulate_stochastic_chunks

    prm = _params(params)
    times = np.linspace(0.0, 1.0, n_grid)
    x_dense = np.asarray(getattr(x, "dense", x), dtype=float)
    sums = np.zeros(n_grid)
    sq = np.zeros(n_grid)
    for res in simulate_stochastic_chunks(algorithm, tg, x_dense, trials, seed, theta=prm.theta):
        curve = potential_curve(tg, x_dense, res.matched_time, times, prm)
        sums += curve.sum(axis=0)
        sq += (curve ** 2).sum(axis=0)
    mean = sums / trials
    var = np.maximum(sq / trials - mean ** 2, 0.0) * trials / max(trials - 1, 1)
    se = np.sqrt(var / trials)
    flagged = []
    for k in range(n_grid - 1):
        drop = mean[k] - mean[k + 1]
        if drop > sigmas * math.hypot(se[k], se[k + 1]):
            flagged.append(k)
    return MonotonicityReport(algorithm, times.tolist(), mean.tolist(), se.tolist(), flagged, trials)
