"""Support sets of the transition kernel and explicit controls that reach them.

Conventions: the controlled system is

    Q' = P / m,   P' = -(Xi + gamma/m) P - grad U(Q) + sqrt(2 gamma kB T) eta,
    Xi' = (||P||_m^2 - kN kB T) / a,

matching the stochastic dynamics (positions move with ``p / m``).  A path is
described by its position curve ``phi``; then ``P = m phi'`` and
``||P||_m^2 = sum_j m_j phi_j'^2``, the mass-weighted speed squared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .errors import ContractError, DomainError, InfeasibleTargetError, UnreachableError
from .model import State, SystemParams

__all__ = ["SupportQuery", "ControlPath", "o_distance", "min_xi", "support_member", "build_control_path",
           "integrate_control", "verify_control", "VerifyReport"]

# quintic smoothstep used to mollify velocity corners; symmetric, so a
# mollified corner leaves the positions outside its window unchanged
_S = np.polynomial.Polynomial([0, 0, 0, 10, -15, 6])
_S1 = _S.deriv()
_IS = _S.integ()
_IS2 = (_S * _S).integ()


def _mnorm(v, m):
    return np.sqrt(np.sum(m * np.asarray(v) ** 2, axis=-1))


@dataclass(frozen=True)
class SupportQuery:
    """Is ``target`` in the support of the law at time ``t`` started from ``origin``?"""

    origin: State
    t: float
    target: State

    def __post_init__(self):
        if not self.t > 0:
            raise ContractError("horizon must be positive")
        if self.origin.xi.ndim or self.target.xi.ndim:
            raise ContractError("queries take single states")


# ---------------------------------------------------------------------------
# O-distance

def _segment_ok(pot, a, b, n_samples: int, u_cap: float) -> bool:
    s = np.linspace(0.0, 1.0, n_samples)[:, None]
    pts = a + s * (b - a)
    if not np.all(pot.in_domain(pts)):
        return False
    with np.errstate(all="ignore"):
        u = pot.value(pts)
    return bool(np.all(np.isfinite(u)) and np.all(u <= u_cap))


def o_distance(q, q2, pot, params: SystemParams, n_nodes: int = 600, k_neighbors: int = 12,
               n_samples: int = 400, energy_cap: float = 1e6, seed: int = 0) -> float:
    """Mass-weighted path distance between two positions within the domain.

    Exact ``||q - q2||_m`` for potentials on convex domains.  Otherwise an
    upper bound: the straight segment if it stays in the domain, else the
    shortest path on a probabilistic roadmap.  Segments are checked by dense
    sampling and must keep ``U`` below ``max(U(q), U(q2)) + energy_cap kB T``;
    a singular barrier (like two coinciding particles) therefore blocks them.
    Restricting paths can only lengthen them, so the bound stays valid.

    Raises
    ------
    UnreachableError
        If no roadmap path connects the two positions.
    """
    q = np.asarray(q, float)
    q2 = np.asarray(q2, float)
    m = params.mass_vector
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(q2))):
        raise ContractError("positions must be finite")
    if not (pot.in_domain(q) and pot.in_domain(q2)):
        raise ContractError("both positions must lie in the domain")
    direct = float(_mnorm(q - q2, m))
    if pot.is_convex_domain:
        return direct
    u_cap = max(float(pot.value(q)), float(pot.value(q2))) + energy_cap * params.kT
    if _segment_ok(pot, q, q2, n_samples, u_cap):
        return direct
    rng = np.random.default_rng(seed)
    span = max(direct / math.sqrt(m.min()), 1.0)
    lo = np.minimum(q, q2) - span
    hi = np.maximum(q, q2) + span
    cand = lo + (hi - lo) * rng.random((n_nodes, q.size))
    with np.errstate(all="ignore"):
        keep = pot.in_domain(cand) & (pot.value(cand) <= u_cap)
    nodes = np.vstack([q, q2, cand[keep]])
    scaled = nodes * np.sqrt(m)
    tree = cKDTree(scaled)
    kk = min(k_neighbors + 1, nodes.shape[0])
    dist, idx = tree.query(scaled, k=kk)
    rows, cols, vals = [], [], []
    for i in range(nodes.shape[0]):
        for d, j in zip(dist[i, 1:], idx[i, 1:]):
            if j > i or i not in idx[j]:
                if _segment_ok(pot, nodes[i], nodes[j], max(20, n_samples // 10), u_cap):
                    rows += [i, j]
                    cols += [j, i]
                    vals += [d, d]
    graph = csr_matrix((vals, (rows, cols)), shape=(nodes.shape[0],) * 2)
    best = float(dijkstra(graph, indices=0)[1])
    if not math.isfinite(best):
        raise UnreachableError("no in-domain path found between the positions (roadmap estimate)")
    return best


def min_xi(x: State, t: float, q2, params: SystemParams, pot, **kw) -> float:
    """Least ``xi'`` reachable at position ``q2`` after time ``t`` from ``x``."""
    if not t > 0:
        raise ContractError("t must be positive")
    L = o_distance(x.q, q2, pot, params, **kw)
    return float(x.xi) + L * L / (t * params.a) - t * params.kT * params.n / params.a


def support_member(query: SupportQuery, pot, params: SystemParams, rtol: float = 0.0) -> bool:
    """True iff the target's ``xi`` is at least the least reachable value.

    ``rtol`` admits rounding, relative to the magnitude of the terms.
    """
    mx = min_xi(query.origin, query.t, query.target.q, params, pot)
    scale = abs(float(query.origin.xi)) + abs(mx) + query.t * params.kT * params.n / params.a
    return bool(float(query.target.xi) >= mx - rtol * scale)


# ---------------------------------------------------------------------------
# piecewise-linear paths with mollified corners

@dataclass
class ControlPath:
    """Position curve with piecewise-constant velocity and mollified corners.

    ``velocities[i]`` holds between corner ``i - 1`` and corner ``i``; corner
    ``i`` is centred at ``corners[i]`` with width ``width``.  ``grid`` and
    ``eta`` sample the control on a fine grid.
    """

    q0: np.ndarray
    xi0: float
    t: float
    corners: np.ndarray
    velocities: np.ndarray
    width: float
    masses: np.ndarray
    delta: float
    s: float | None
    mode: str
    target: State
    grid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    eta: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    # piece boundaries: [0, c0 - w/2], [c0 - w/2, c0 + w/2], [c0 + w/2, c1 - w/2], ...
    @property
    def knots(self) -> np.ndarray:
        h = 0.5 * self.width
        inner = np.ravel(np.column_stack([self.corners - h, self.corners + h]))
        return np.concatenate([[0.0], inner, [self.t]])

    def _starts(self):
        """Positions and kinetic integrals at every knot."""
        kn = self.knots
        m = self.masses
        pos = [np.array(self.q0, float)]
        kin = [0.0]
        for i in range(len(kn) - 1):
            L = kn[i + 1] - kn[i]
            if i % 2 == 0:
                v = self.velocities[i // 2]
                pos.append(pos[-1] + L * v)
                kin.append(kin[-1] + L * float(np.sum(m * v * v)))
            else:
                v1, v2 = self.velocities[i // 2], self.velocities[i // 2 + 1]
                d = v2 - v1
                pos.append(pos[-1] + L * (v1 + d * _IS(1.0)))
                kin.append(kin[-1] + L * float(np.sum(m * (v1 * v1 + 2 * v1 * d * _IS(1.0) + d * d * _IS2(1.0)))))
        return np.array(pos), np.array(kin)

    def evaluate(self, u):
        """Position, velocity, acceleration and kinetic integral at times ``u``."""
        u = np.atleast_1d(np.asarray(u, float))
        kn = self.knots
        i = np.clip(np.searchsorted(kn, u, side="right") - 1, 0, len(kn) - 2)
        return self.evaluate_local(i, u - kn[i])

    def evaluate_local(self, i, r):
        """As :meth:`evaluate`, at offset ``r`` into piece ``i`` (between knots ``i`` and ``i+1``).

        Working with offsets keeps full resolution inside very narrow corners.
        """
        r = np.atleast_1d(np.asarray(r, float))
        i = np.broadcast_to(np.asarray(i), r.shape)
        kn = self.knots
        pos, kin = self._starts()
        L = kn[i + 1] - kn[i]
        m = self.masses
        n = self.q0.size
        phi = np.empty((r.size, n))
        v = np.empty((r.size, n))
        acc = np.zeros((r.size, n))
        K = np.empty(r.size)
        lin = i % 2 == 0
        if np.any(lin):
            vv = self.velocities[i[lin] // 2]
            phi[lin] = pos[i[lin]] + r[lin, None] * vv
            v[lin] = vv
            K[lin] = kin[i[lin]] + r[lin] * np.sum(m * vv * vv, axis=-1)
        cur = ~lin
        if np.any(cur):
            v1 = self.velocities[i[cur] // 2]
            d = self.velocities[i[cur] // 2 + 1] - v1
            w = L[cur]
            x = np.clip(r[cur] / w, 0.0, 1.0)
            phi[cur] = pos[i[cur]] + r[cur, None] * v1 + (w * _IS(x))[:, None] * d
            v[cur] = v1 + _S(x)[:, None] * d
            acc[cur] = (_S1(x) / w)[:, None] * d
            K[cur] = kin[i[cur]] + w * (x * np.sum(m * v1 * v1, axis=-1) + 2 * _IS(x) * np.sum(m * v1 * d, axis=-1)
                                        + _IS2(x) * np.sum(m * d * d, axis=-1))
        return phi, v, acc, K

    def kinetic_integral(self) -> float:
        return float(self._starts()[1][-1])

    def xi_at(self, u, params: SystemParams):
        K = self.evaluate(u)[3]
        return self.xi0 + (K - np.atleast_1d(u) * params.n * params.kT) / params.a

    def control(self, u, pot, params: SystemParams):
        """Control ``eta(u)`` read off the momentum equation along the path."""
        u = np.atleast_1d(np.asarray(u, float))
        kn = self.knots
        i = np.clip(np.searchsorted(kn, u, side="right") - 1, 0, len(kn) - 2)
        return self.control_local(i, u - kn[i], pot, params)

    def control_local(self, i, r, pot, params: SystemParams):
        phi, v, acc, K = self.evaluate_local(i, r)
        m = self.masses
        P = m * v
        u = self.knots[i] + np.atleast_1d(r)
        Xi = self.xi0 + (K - u * params.n * params.kT) / params.a
        rhs = m * acc + (Xi[:, None] + params.gamma / m) * P + pot.grad(phi)
        return rhs / math.sqrt(2.0 * params.gamma * params.kT)

    def endpoints(self):
        phi, v, _, _ = self.evaluate(np.array([0.0, self.t]))
        return phi, self.masses * v


def _path(q, p, q2, p2, t, delta, s, m, width_frac):
    v0 = p / m
    v2 = p2 / m
    end = t if s is None else s
    a = q + delta * v0
    b = q2 - delta * v2
    chord = (b - a) / (end - 2 * delta)
    if s is None:
        corners = np.array([delta, t - delta])
        vel = np.array([v0, chord, v2])
    else:
        corners = np.array([delta, s - delta, t - delta])
        vel = np.array([v0, chord, np.zeros_like(v0), v2])
    return corners, vel, width_frac * delta


def build_control_path(x: State, t: float, target: State, pot, params: SystemParams, delta: float | None = None,
                       s: float | None = None, width_frac: float = 0.1, xi_tol: float = 1e-10,
                       boundary_tol: float = 1e-8, n_grid: int = 2001) -> ControlPath:
    """Construct a path from ``x`` to ``target`` whose ``xi`` lands on the target.

    The path leaves ``q`` with velocity ``p/m`` for a time ``delta``, follows a
    straight line, optionally dwells at ``q' - delta p'/m`` from ``s - delta``
    on (the dwell split), and arrives with velocity ``p'/m``.  Corners are
    mollified over ``width_frac * delta``.  The endpoint ``xi`` is set by the
    kinetic integral, which is matched to the target by bisection:

    * targets on the boundary of the support (within ``xi_tol``): ``delta``
      shrinks until the excess over the boundary value is below
      ``boundary_tol`` in ``xi`` (the boundary itself is only a limit);
    * targets slightly inside: bisection on ``delta``;
    * targets far inside: ``delta`` is fixed and the dwell split ``s`` is
      bisected.

    Passing ``delta`` (and ``s``) skips the matching and builds that path.

    Raises
    ------
    InfeasibleTargetError
        If the target lies below the support boundary, or no bracket exists.
    """
    if not t > 0:
        raise ContractError("t must be positive")
    if not pot.is_convex_domain:
        raise ContractError("straight-line construction needs a convex domain")
    m = params.mass_vector
    q, p = np.asarray(x.q, float), np.asarray(x.p, float)
    q2, p2 = np.asarray(target.q, float), np.asarray(target.p, float)
    J = params.a * (float(target.xi) - float(x.xi)) + t * params.n * params.kT
    Jmin = float(_mnorm(q2 - q, m)) ** 2 / t
    tolJ = params.a * xi_tol
    scaleJ = max(abs(J), Jmin, 1.0)
    if J < Jmin - 1e-12 * scaleJ:
        raise InfeasibleTargetError(
            f"target xi {float(target.xi):.6g} lies below the least reachable value "
            f"{float(x.xi) + (Jmin - t * params.n * params.kT) / params.a:.6g}")

    def kin(d, ss=None):
        c, v, w = _path(q, p, q2, p2, t, d, ss, m, width_frac)
        tmp = ControlPath(q, float(x.xi), t, c, v, w, m, d, ss, "", target)
        return tmp.kinetic_integral()

    d_max = 0.45 * t
    mode = "given"
    if delta is None:
        if J - Jmin <= tolJ:
            mode = "boundary"
            delta = 0.25 * t
            while kin(delta) - J > params.a * boundary_tol:
                delta *= 0.5
                if delta < 1e-14 * t:
                    raise InfeasibleTargetError("boundary target not approached within tolerance")
        else:
            grid = d_max * np.logspace(-12, 0, 121)
            vals = np.array([kin(d) for d in grid]) - J
            hit = np.nonzero((vals[:-1] <= 0) & (vals[1:] >= 0))[0]
            if hit.size:
                mode = "delta"
                i = hit[0]
                delta = optimize.brentq(lambda d: kin(d) - J, grid[i], grid[i + 1], xtol=1e-16, rtol=1e-15)
            else:
                mode = "dwell"
                if np.allclose(q, q2):
                    raise InfeasibleTargetError("dwell split needs q' != q")
                # a shorter chord carries more kinetic energy; shrink delta until the
                # dwell split brackets the target
                delta = min(0.01 * t, 0.5 * grid[int(np.argmin(np.abs(vals)))])
                while True:
                    s_lo, s_hi = 2.0 * delta * (1 + 1e-9) + width_frac * delta, t
                    f_hi = kin(delta, s_hi) - J
                    ss = np.geomspace(s_lo, s_hi, 200)
                    fv = np.array([kin(delta, v) for v in ss]) - J
                    brk = np.nonzero((fv[:-1] >= 0) & (fv[1:] <= 0))[0]
                    if f_hi <= 0 and brk.size:
                        break
                    delta *= 0.1
                    if f_hi > 0 or delta < 1e-9 * t:
                        raise InfeasibleTargetError("dwell split bisection could not bracket the target")
                j = brk[-1]
                s = optimize.brentq(lambda v: kin(delta, v) - J, ss[j], ss[j + 1], xtol=1e-15 * t, rtol=1e-15)
    if not (0 < delta < 0.5 * t):
        raise ContractError("delta must lie in (0, t/2)")
    c, v, w = _path(q, p, q2, p2, t, delta, s, m, width_frac)
    path = ControlPath(q, float(x.xi), t, c, v, w, m, float(delta), s, mode, target)
    path.grid = np.union1d(np.linspace(0.0, t, n_grid), path.knots)
    phi = path.evaluate(path.grid)[0]
    if not np.all(pot.in_domain(phi)):
        raise InfeasibleTargetError("constructed path leaves the domain")
    path.eta = path.control(path.grid, pot, params)
    return path


# ---------------------------------------------------------------------------
# forward verification

@dataclass
class VerifyReport:
    endpoint: State
    target: State
    error_q: np.ndarray
    error_p: np.ndarray
    error_xi: float
    max_error: float
    kinetic_integral: float
    boundary_gap: float

    def to_dict(self) -> dict:
        return {"endpoint": {"q": self.endpoint.q.tolist(), "p": self.endpoint.p.tolist(),
                             "xi": float(self.endpoint.xi)},
                "target": {"q": self.target.q.tolist(), "p": self.target.p.tolist(), "xi": float(self.target.xi)},
                "error_q": self.error_q.tolist(), "error_p": self.error_p.tolist(), "error_xi": self.error_xi,
                "max_error": self.max_error, "kinetic_integral": self.kinetic_integral,
                "boundary_gap": self.boundary_gap}


def integrate_control(x: State, t: float, eta, pot, params: SystemParams, breakpoints=(),
                      rtol: float = 1e-12, atol: float = 1e-13) -> State:
    """Integrate the controlled system with control ``eta(u)`` (DOP853, piecewise).

    Integration restarts at each breakpoint so that kinks in ``eta`` are
    resolved.

    Raises
    ------
    DomainError
        If the solution leaves the domain (the time is reported).
    """
    cuts = np.unique(np.concatenate([[0.0], np.asarray(breakpoints, float), [t]]))
    cuts = cuts[(cuts >= 0) & (cuts <= t)]
    return _integrate_pieces(x, cuts, lambda k, r: eta(cuts[k] + r), pot, params, rtol, atol)


def _integrate_pieces(x: State, cuts, eta_local, pot, params: SystemParams, rtol: float, atol: float) -> State:
    """Integrate piece ``k`` in local time ``tau in [0, 1]``; ``eta_local(k, r)`` gets the offset ``r``."""
    m = params.mass_vector
    n = params.n
    amp = math.sqrt(2.0 * params.gamma * params.kT)
    y = np.concatenate([np.asarray(x.q, float), np.asarray(x.p, float), [float(x.xi)]])
    for k in range(len(cuts) - 1):
        L = float(cuts[k + 1] - cuts[k])
        if L <= 0:
            continue

        def rhs(tau, y, k=k, L=L):
            Q, P, Xi = y[:n], y[n:2 * n], y[2 * n]
            if not pot.in_domain(Q):
                raise DomainError(f"controlled solution left the domain at u={cuts[k] + tau * L:.6g}, "
                                  f"q={Q.tolist()}")
            e = np.asarray(eta_local(k, tau * L), float).reshape(n)
            dP = -(Xi + params.gamma / m) * P - pot.grad(Q[None])[0] + amp * e
            dXi = (np.sum(P * P / m) - n * params.kT) / params.a
            return L * np.concatenate([P / m, dP, [dXi]])

        sol = integrate.solve_ivp(rhs, (0.0, 1.0), y, method="DOP853", rtol=rtol, atol=atol)
        if not sol.success:
            raise DomainError(f"integration failed on [{cuts[k]:.6g}, {cuts[k + 1]:.6g}]: {sol.message}")
        y = sol.y[:, -1]
    return State(y[:n], y[n:2 * n], y[2 * n])


def verify_control(path: ControlPath, x: State, pot, params: SystemParams, perturb=None,
                   rtol: float = 1e-12, atol: float = 1e-13) -> VerifyReport:
    """Integrate the controlled system along ``path`` and compare with its target.

    ``perturb(u)``, if given, is added to the control (used to check that the
    verification discriminates).
    """
    kn = path.knots

    def eta(k, r):
        e = path.control_local(k, r, pot, params)[0]
        return e if perturb is None else e + np.asarray(perturb(kn[k] + r), float)

    end = _integrate_pieces(x, kn, eta, pot, params, rtol, atol)
    tg = path.target
    eq = np.abs(end.q - tg.q)
    ep = np.abs(end.p - tg.p)
    ex = abs(float(end.xi) - float(tg.xi))
    Jmin = float(_mnorm(tg.q - np.asarray(x.q), params.mass_vector)) ** 2 / path.t
    return VerifyReport(end, tg, eq, ep, ex, float(max(eq.max(), ep.max(), ex)), path.kinetic_integral(),
                        path.kinetic_integral() - Jmin)
