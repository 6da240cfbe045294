"""Sampling diagnostics against the augmented Gibbs measure.

The reference density is ``exp(-beta H) / Z`` on ``(q, p, xi)``.  Its ``p`` and
``xi`` factors are Gaussian (variance ``m_j kB T`` and ``kB T / a``), so only
the configurational part needs quadrature, and only for ``n <= 2``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import interpolate, special

from .errors import ContractError
from .model import State, SystemParams, hamiltonian
from .dynamics import Trajectory

__all__ = ["GibbsModel", "gibbs_log_density", "ks_distance", "temperature_estimate", "ErgodicAverage",
           "ergodic_average", "TVDecay", "tv_decay", "stationarity_residual", "ContractionCheck",
           "lyapunov_contraction_check", "DiagnosticsReport", "diagnose", "burn_in"]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


def _gl_panels(lo: float, hi: float, n_panels: int):
    """Nodes and weights of composite 20-point Gauss-Legendre on ``[lo, hi]``."""
    edges = np.linspace(lo, hi, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * _GL_NODES).ravel()
    weights = (half[:, None] * _GL_WEIGHTS).ravel()
    return nodes, weights


class GibbsModel:
    """Normalized augmented Gibbs density for a potential and system.

    ``beta`` defaults to ``params.beta``; passing a different value gives a
    deliberately mismatched reference, which the stationarity test must reject.
    ``logZ`` is available for ``n <= 2`` (composite Gauss-Legendre on a box
    outside which ``exp(-beta (U - U_min))`` is below ``exp(-60)``).
    """

    def __init__(self, pot, params: SystemParams, beta: float | None = None, n_panels: int = 400):
        if pot.n != params.n:
            raise ContractError("potential and system dimensions differ")
        self.pot = pot
        self.params = params
        self.beta = float(params.beta if beta is None else beta)
        if not self.beta > 0:
            raise ContractError("beta must be positive")
        self.n_panels = int(n_panels)
        self.box = None
        self.logZq = None
        self.logZ = None
        if params.n <= 2:
            self._normalize()

    def _normalize(self):
        pot, n = self.pot, self.params.n
        anchor = np.asarray(pot.anchor, float)
        u0 = float(pot.value(anchor))
        lo, hi = anchor.copy(), anchor.copy()
        for j in range(n):
            for sgn, out in ((-1.0, lo), (1.0, hi)):
                r = 1.0
                while True:
                    y = anchor.copy()
                    y[j] += sgn * r
                    if self.beta * (float(pot.value(y)) - u0) > 60.0 or r > 1e6:
                        break
                    r *= 1.5
                out[j] = anchor[j] + sgn * r
        self.box = (lo, hi)
        grids = [_gl_panels(lo[j], hi[j], self.n_panels if n == 1 else self.n_panels // 4) for j in range(n)]
        if n == 1:
            x, w = grids[0]
            u = pot.value(x[:, None])
            logw = np.log(w)
        else:
            (x0, w0), (x1, w1) = grids
            X0, X1 = np.meshgrid(x0, x1, indexing="ij")
            u = pot.value(np.stack([X0, X1], axis=-1)).ravel()
            logw = (np.log(w0)[:, None] + np.log(w1)[None, :]).ravel()
        with np.errstate(invalid="ignore"):
            terms = np.where(np.isfinite(u), -self.beta * u + logw, -np.inf)
        self.logZq = float(special.logsumexp(terms))
        m = self.params.mass_vector
        self.logZ = (self.logZq + 0.5 * float(np.sum(np.log(2 * np.pi * m / self.beta)))
                     + 0.5 * math.log(2 * np.pi / (self.params.a * self.beta)))

    def q_marginal_cdf(self, j: int = 0):
        """CDF of coordinate ``q_j`` under the configurational marginal (``n <= 2``).

        Tabulated on the Gauss-Legendre nodes (cumulative panel sums) and
        interpolated by cubic Hermite splines using the density as slope.
        """
        if self.logZq is None:
            raise ContractError("q-marginal CDF needs n <= 2")
        lo, hi = self.box
        n = self.params.n
        edges = np.linspace(lo[j], hi[j], 4 * self.n_panels + 1)
        x, w = _gl_panels(lo[j], hi[j], 4 * self.n_panels)

        def dens(y):
            y = np.asarray(y, float)
            if n == 1:
                u = self.pot.value(y[:, None])
                return np.where(np.isfinite(u), np.exp(-self.beta * u - self.logZq), 0.0)
            o = 1 - j
            xo, wo = _gl_panels(lo[o], hi[o], self.n_panels // 4)
            pts = np.empty((y.size, xo.size, 2))
            pts[..., j] = y[:, None]
            pts[..., o] = xo[None, :]
            u = self.pot.value(pts)
            with np.errstate(over="ignore"):
                f = np.where(np.isfinite(u), np.exp(-self.beta * u - self.logZq), 0.0)
            return f @ wo

        mass = (dens(x) * w).reshape(-1, 20).sum(axis=1)
        F = np.concatenate([[0.0], np.cumsum(mass)])
        F /= F[-1]
        spline = interpolate.CubicHermiteSpline(edges, F, dens(edges) / np.sum(mass))

        def cdf(y):
            y = np.asarray(y, float)
            return np.clip(np.where(y <= lo[j], 0.0, np.where(y >= hi[j], 1.0, spline(np.clip(y, lo[j], hi[j])))),
                           0.0, 1.0)

        return cdf

    def p_marginal_cdf(self, j: int = 0):
        s = math.sqrt(self.params.mass_vector[j] / self.beta)
        return lambda y: special.ndtr(np.asarray(y, float) / s)

    def xi_marginal_cdf(self):
        s = math.sqrt(1.0 / (self.params.a * self.beta))
        return lambda y: special.ndtr(np.asarray(y, float) / s)


def gibbs_log_density(x: State, model: GibbsModel):
    """``-beta H(x) - logZ``; ``-inf`` outside the domain.

    Without ``logZ`` (``n > 2``) the unnormalized value ``-beta H`` is returned,
    which is still valid for density ratios.
    """
    ok = model.pot.in_domain(x.q)
    qs = np.where(np.asarray(ok)[..., None], x.q, model.pot.anchor)
    H = hamiltonian(State(qs, x.p, x.xi), model.pot, model.params)
    out = -model.beta * H - (model.logZ if model.logZ is not None else 0.0)
    return np.where(ok, out, -np.inf)


def ks_distance(samples, cdf) -> float:
    """Kolmogorov-Smirnov sup distance between the empirical CDF and ``cdf``.

    Both one-sided limits are compared at every distinct sample value, so the
    result is exact for continuous ``cdf`` and for step functions that jump at
    sample values.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ContractError("ks_distance needs at least one sample")
    if not np.all(np.isfinite(x)):
        raise ContractError("samples must be finite")
    vals, counts = np.unique(x, return_counts=True)
    n = x.size
    cum = np.cumsum(counts)
    upper = cum / n
    lower = (cum - counts) / n
    F = np.asarray(cdf(vals), float)
    F_left = np.asarray(cdf(np.nextafter(vals, -np.inf)), float)
    return float(max(np.max(np.abs(upper - F)), np.max(np.abs(lower - F_left))))


def _time_weights(T: int) -> np.ndarray:
    if T == 1:
        return np.ones(1)
    w = np.ones(T)
    w[0] = w[-1] = 0.5
    return w / w.sum()


def _values_over(f, obj):
    """Evaluate ``f`` on a trajectory or a sample State; returns (values, time axis present)."""
    if isinstance(obj, Trajectory):
        return np.asarray(f(obj.states), float), True
    if isinstance(obj, State):
        return np.asarray(f(obj), float), False
    raise ContractError("expected a Trajectory or a State")


@dataclass(frozen=True)
class ErgodicAverage:
    value: float
    se: float
    n_batches: int


def ergodic_average(f, traj, n_batches: int = 20) -> ErgodicAverage:
    """Time average of ``f`` (trapezoid over the stored states), pooled over chains.

    The standard error uses batch means: over chain groups when a batch of
    at least ``n_batches`` independent chains is present, otherwise over
    contiguous time blocks.  A ``State`` of samples is averaged uniformly.
    """
    v, timed = _values_over(f, traj)
    if timed:
        if v.shape[0] < 2:
            raise ContractError("trajectory needs at least two stored states")
        w = _time_weights(v.shape[0])
        if v.ndim == 1:
            v = v[:, None]
        per_chain = np.tensordot(w, v, axes=(0, 0))
        value = float(per_chain.mean())
        C = v.shape[1]
        if C >= n_batches:
            groups = np.array_split(per_chain, n_batches)
            means = np.array([g.mean() for g in groups])
            sizes = np.array([g.size for g in groups])
        else:
            blocks = np.array_split(np.arange(v.shape[0]), n_batches)
            means = np.array([v[b].mean() for b in blocks if b.size])
            sizes = np.ones(means.size)
    else:
        flat = v.ravel()
        value = float(flat.mean())
        groups = np.array_split(flat, min(n_batches, flat.size))
        means = np.array([g.mean() for g in groups])
        sizes = np.array([g.size for g in groups])
    nb = means.size
    if nb < 2:
        return ErgodicAverage(value, float("nan"), nb)
    wmean = np.sum(sizes * means) / sizes.sum()
    var = np.sum(sizes * (means - wmean) ** 2) / (sizes.sum() * (nb - 1))
    return ErgodicAverage(value, float(math.sqrt(var)), nb)


def temperature_estimate(traj, params: SystemParams, per_particle: bool = False):
    """Kinetic temperature: average of ``||p||_m^2 / (k N)`` (times ``1/kB``).

    With ``per_particle`` the estimate ``||p_i||_{m_i}^2 / k`` is returned for
    each particle, which checks equipartition.
    """
    mv = params.mass_vector
    if per_particle:
        k = params.k
        out = []
        for i in range(params.N):
            sl = slice(i * k, (i + 1) * k)
            f = (lambda x, sl=sl: np.sum(x.p[..., sl] ** 2 / mv[sl], axis=-1) / (k * params.kB))
            out.append(ergodic_average(f, traj).value)
        return np.array(out)
    f = lambda x: np.sum(x.p ** 2 / mv, axis=-1) / (params.n * params.kB)
    return ergodic_average(f, traj).value


# ---------------------------------------------------------------------------
# total variation decay

@dataclass
class TVDecay:
    """Histogram TV series between two ensembles and its log-linear fit."""

    times: np.ndarray
    tv: np.ndarray
    floor: np.ndarray
    window: tuple
    rate: float
    intercept: float
    r2: float

    def monotone(self, slack: float = 1.0) -> bool:
        """Non-increasing within the fit window up to ``slack`` times the noise floor."""
        i0, i1 = self.window
        seg = self.tv[i0:i1]
        fl = self.floor[i0:i1]
        run_min = np.minimum.accumulate(seg)
        return bool(np.all(seg <= run_min + slack * fl))

    def to_dict(self) -> dict:
        return {"times": self.times.tolist(), "tv": self.tv.tolist(), "floor": self.floor.tolist(),
                "window": list(self.window), "rate": self.rate, "intercept": self.intercept, "r2": self.r2}


def _fd_edges(x: np.ndarray, max_bins: int, dim: int = 1):
    """Freedman-Diaconis edges; in ``dim`` dimensions the width scales as ``n^(-1/(dim+2))``."""
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return np.array([lo - 0.5, hi + 0.5])
    q75, q25 = np.percentile(x, [75, 25])
    width = 2.0 * (q75 - q25) * x.size ** (-1.0 / (dim + 2))
    if width <= 0:
        width = (hi - lo) / math.ceil(x.size ** (1.0 / (dim + 2)))
    nb = int(math.ceil((hi - lo) / width))
    if nb > max_bins:
        raise ContractError(f"degenerate binning: {nb} bins along one axis")
    return np.linspace(lo, hi, max(nb, 1) + 1)


def _tv_hist(a: np.ndarray, b: np.ndarray, max_bins: int):
    pooled = np.concatenate([a, b])
    edges = [_fd_edges(pooled[:, d], max_bins, pooled.shape[1]) for d in range(pooled.shape[1])]
    ha, _ = np.histogramdd(a, bins=edges)
    hb, _ = np.histogramdd(b, bins=edges)
    pa, pb = ha / a.shape[0], hb / b.shape[0]
    tv = 0.5 * float(np.abs(pa - pb).sum())
    pbar = 0.5 * (pa + pb)
    floor = float(np.sum(np.sqrt(pbar / (np.pi * a.shape[0]))))
    return tv, floor


def _marginal(tr, coord: int):
    if isinstance(tr, Trajectory):
        if not tr.batched:
            raise ContractError("tv_decay needs batched ensembles")
        return tr.times, np.stack([tr.q[..., coord], tr.p[..., coord]], axis=-1)
    raise ContractError("expected Trajectory ensembles")


def tv_decay(ensA, ensB, coord: int = 0, max_bins: int = 2000, upper: float = 0.9,
             floor_factor: float = 2.0) -> TVDecay:
    """Histogram total variation on the ``(q_coord, p_coord)`` marginal over time.

    Bins follow the Freedman-Diaconis rule on the pooled snapshot (width
    ``2 IQR n^(-1/4)`` per axis, the two-dimensional form of the rule), so the
    result is symmetric in the two ensembles.  The noise floor is the expected
    TV of two independent equal-size samples from the pooled histogram,
    ``sum_b sqrt(p_b / (pi n))``.  The fit ``log TV = c - rate t`` uses the
    states with ``floor_factor * floor < TV <= upper`` before the first drop
    into the floor.
    """
    tA, xA = _marginal(ensA, coord)
    tB, xB = _marginal(ensB, coord)
    if tA.shape != tB.shape or not np.allclose(tA, tB):
        raise ContractError("ensembles must share snapshot times")
    if xA.shape[1] != xB.shape[1]:
        raise ContractError("ensembles must have equal size")
    if xA.shape[1] < 1000:
        raise ContractError("ensembles need at least 1000 chains")
    tv = np.empty(tA.size)
    fl = np.empty(tA.size)
    for i in range(tA.size):
        tv[i], fl[i] = _tv_hist(xA[i], xB[i], max_bins)
    above = tv > floor_factor * fl
    end = int(np.argmin(above)) if not above.all() else tv.size
    start = int(np.argmax(tv[:end] <= upper)) if end > 0 and np.any(tv[:end] <= upper) else end
    rate = intercept = r2 = float("nan")
    if end - start >= 3:
        t, y = tA[start:end], np.log(tv[start:end])
        slope, icpt = np.polyfit(t, y, 1)
        resid = y - (icpt + slope * t)
        ss = np.sum((y - y.mean()) ** 2)
        rate, intercept = float(-slope), float(icpt)
        r2 = float(1.0 - np.sum(resid ** 2) / ss) if ss > 0 else 1.0
    return TVDecay(tA, tv, fl, (start, end), rate, intercept, r2)


# ---------------------------------------------------------------------------
# weak stationarity

def _poly_gauss(x, i: int, c: float, s: float):
    """``g = (x-c)^i exp(-(x-c)^2/(2 s^2))`` with first and second derivatives."""
    y = x - c
    e = np.exp(-0.5 * y * y / (s * s))
    yi = y ** i
    yim1 = i * y ** (i - 1) if i >= 1 else 0.0 * y
    yim2 = i * (i - 1) * y ** (i - 2) if i >= 2 else 0.0 * y
    g = yi * e
    d = (yim1 - yi * y / s ** 2) * e
    dd = (yim2 - (2 * i + 1) * yi / s ** 2 + yi * y * y / s ** 4) * e
    return g, d, dd


DEFAULT_BATTERY = (
    (1, 0, 0, 0.0, 1.0), (0, 1, 0, 0.0, 1.0), (0, 0, 1, 0.0, 1.0), (1, 1, 0, 0.0, 1.2),
    (2, 0, 0, 0.3, 1.0), (0, 2, 0, 0.0, 1.5), (1, 0, 1, 0.5, 1.0), (0, 1, 1, 0.0, 0.8),
    (2, 1, 1, -0.4, 1.3), (1, 2, 0, 0.7, 1.1),
)


def stationarity_residual(model: GibbsModel, battery=DEFAULT_BATTERY, n_nodes: int = 80) -> float:
    """Largest ``|E_model[L phi]|`` over test functions ``phi`` (one-dimensional systems).

    Each ``phi(q, p, xi) = g_i(q) g_j(p) g_l(xi)`` with ``g`` a polynomial
    times a Gaussian centred at ``c`` (in ``q``) of width ``s``; entries of
    ``battery`` are ``(i, j, l, c, s)``.  The generator uses the dynamics'
    own temperature and the expectation uses ``model.beta``, so a mismatched
    model gives a large residual.  Both the density and ``phi`` factor over
    ``q``, ``p``, ``xi``, and so does every term of ``L phi``; the expectation
    is assembled from one-dimensional rules: Gauss-Hermite in ``p`` and ``xi``
    (matched to the model's Gaussian factors), composite Gauss-Legendre in ``q``.
    """
    P = model.params
    if P.n != 1:
        raise ContractError("stationarity_residual is implemented for N = k = 1")
    if model.logZq is None:
        raise ContractError("model is not normalized")
    m = float(P.mass_vector[0])
    b = model.beta
    xh, wh = np.polynomial.hermite_e.hermegauss(n_nodes)
    wh = wh / math.sqrt(2 * np.pi)
    p = xh * math.sqrt(m / b)
    xi = xh / math.sqrt(P.a * b)
    lo, hi = model.box
    q, wq = _gl_panels(lo[0], hi[0], model.n_panels)
    u = model.pot.value(q[:, None])
    ok = np.isfinite(u)
    wq = np.where(ok, np.exp(-b * np.where(ok, u, 0.0) - model.logZq), 0.0) * wq
    U1 = np.where(ok, model.pot.grad(np.where(ok, q, float(model.pot.anchor[0]))[:, None])[:, 0], 0.0)
    Eq = lambda f: float(np.sum(wq * f))
    Ep = lambda f: float(np.sum(wh * f))
    worst = 0.0
    for (i, j, l, c, s) in battery:
        gq, dq, _ = _poly_gauss(q, i, c, s)
        gp, dp, ddp = _poly_gauss(p, j, 0.0, s)
        gx, dx, _ = _poly_gauss(xi, l, 0.0, s)
        E_gx = Ep(gx)
        r = (Eq(dq) * Ep(p * gp) / m * E_gx
             - Eq(gq) * Ep(p * dp) * (Ep(xi * gx) + P.gamma / m * E_gx)
             - Eq(U1 * gq) * Ep(dp) * E_gx
             + P.gamma * P.kT * Eq(gq) * Ep(ddp) * E_gx
             + Eq(gq) * (Ep(p * p * gp) / m - P.n * P.kT * Ep(gp)) * Ep(dx) / P.a)
        worst = max(worst, abs(r))
    return worst


# ---------------------------------------------------------------------------
# Lyapunov contraction

@dataclass(frozen=True)
class ContractionCheck:
    """``log E W(x_t)`` (with standard error) against ``log(e^{-alpha t} W(x) + K/alpha)``."""

    t: float
    log_mean: float
    log_se: float
    log_bound: float
    passed: bool

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def lyapunov_contraction_check(logW_t, logW0: float, alpha: float, logK: float, t: float) -> ContractionCheck:
    """Monte-Carlo check of ``E_x W(x_t) <= e^{-alpha t} W(x) + K/alpha + 3 SE`` in log space."""
    lw = np.asarray(logW_t, float).ravel()
    n = lw.size
    if n < 2:
        raise ContractError("need at least two chains")
    log_mean = float(special.logsumexp(lw) - math.log(n))
    # unbiased variance of W via E W^2 - (E W)^2, evaluated relative to the mean
    rel = np.exp(lw - log_mean)
    var_rel = float(np.sum((rel - 1.0) ** 2) / (n - 1))
    log_se = log_mean + 0.5 * math.log(var_rel / n) if var_rel > 0 else -np.inf
    log_bound = float(np.logaddexp(-alpha * t + logW0, logK - math.log(alpha)))
    rhs = float(np.logaddexp(log_bound, math.log(3.0) + log_se)) if np.isfinite(log_se) else log_bound
    return ContractionCheck(float(t), log_mean, float(log_se), log_bound, bool(log_mean <= rhs))


# ---------------------------------------------------------------------------
# report

@dataclass
class DiagnosticsReport:
    temperature: float
    temperature_se: float
    xi_mean: float
    xi_var: float
    ks: dict
    ergodic: list
    stationarity_residual: float | None = None
    tv: dict | None = None
    n_states: int = 0
    burn_in_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)

    def all_finite(self) -> bool:
        def walk(v):
            if isinstance(v, dict):
                return all(walk(x) for x in v.values())
            if isinstance(v, (list, tuple)):
                return all(walk(x) for x in v)
            if isinstance(v, float):
                return math.isfinite(v)
            return True
        return walk(self.to_dict())


def burn_in(traj: Trajectory, fraction: float = 0.1) -> Trajectory:
    """Drop the first ``fraction`` of the simulated time."""
    if not 0 <= fraction < 1:
        raise ContractError("burn-in fraction must lie in [0, 1)")
    return traj.after(fraction * traj.times[-1])


def diagnose(traj: Trajectory, pot, params: SystemParams, burn_in_fraction: float = 0.1,
             stationarity: bool = True) -> DiagnosticsReport:
    """Standard report: temperature, ``xi`` moments, KS per marginal, ergodic averages."""
    tr = burn_in(traj, burn_in_fraction)
    model = GibbsModel(pot, params)
    mv = params.mass_vector
    temp = ergodic_average(lambda x: np.sum(x.p ** 2 / mv, axis=-1) / (params.n * params.kB), tr)
    xi_mean = ergodic_average(lambda x: x.xi, tr)
    xi_sq = ergodic_average(lambda x: x.xi ** 2, tr)
    ks = {"xi": ks_distance(tr.xi, model.xi_marginal_cdf())}
    for j in range(params.n):
        ks[f"p{j}"] = ks_distance(tr.p[..., j], model.p_marginal_cdf(j))
        if model.logZq is not None:
            ks[f"q{j}"] = ks_distance(tr.q[..., j], model.q_marginal_cdf(j))
    ergodic = [
        {"observable": "kinetic ||p||_m^2", "value": temp.value * params.n * params.kB,
         "se": temp.se * params.n * params.kB, "reference": params.n * params.kT},
        {"observable": "xi", "value": xi_mean.value, "se": xi_mean.se, "reference": 0.0},
        {"observable": "xi^2", "value": xi_sq.value, "se": xi_sq.se, "reference": params.kT / params.a},
    ]
    res = None
    if stationarity and params.n == 1:
        res = stationarity_residual(model)
    n_states = int(np.prod(tr.xi.shape))
    return DiagnosticsReport(temperature=temp.value, temperature_se=temp.se, xi_mean=xi_mean.value,
                             xi_var=xi_sq.value - xi_mean.value ** 2, ks=ks, ergodic=ergodic,
                             stationarity_residual=res, n_states=n_states, burn_in_time=float(tr.times[0]))
