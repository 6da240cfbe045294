"""Integrators, trajectories and ensembles for the thermostatted Langevin system.

Both schemes keep a running quadrature of ``||p||_m^2`` (the kinetic integral)
and of ``||p||_m`` (the arc length), using the same quadrature rule that drives
the ``xi`` update.  This makes the identity
``xi_n - xi_0 = (kinetic_integral - t kN/beta) / a`` exact up to rounding, and
the Cauchy-Schwarz support bound a checkable property of every trajectory.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .errors import ContractError, StepError
from .model import State, SystemParams

__all__ = ["IntegratorConfig", "Trajectory", "step_euler_maruyama", "step_splitting", "simulate",
           "ensemble_run", "xi_identity_error", "support_bound_violations"]

MAX_HALVINGS = 30


@dataclass(frozen=True)
class IntegratorConfig:
    """Discretization settings.

    ``boundary_policy`` decides what happens when a step would leave the
    domain: ``halve_dt`` retries it as two half steps (Brownian-bridge refined
    noise, at most 30 levels), ``reject_step`` leaves the state unchanged.
    """

    scheme: str = "splitting"
    dt: float = 1e-3
    n_steps: int = 1000
    seed: int = 0
    boundary_policy: str = "halve_dt"

    def __post_init__(self):
        if self.scheme not in ("euler_maruyama", "splitting"):
            raise ContractError(f"unknown scheme {self.scheme!r}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ContractError(f"dt must be positive, got {self.dt}")
        if int(self.n_steps) < 0:
            raise ContractError("n_steps must be >= 0")
        if self.boundary_policy not in ("halve_dt", "reject_step"):
            raise ContractError(f"unknown boundary_policy {self.boundary_policy!r}")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ContractError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Trajectory:
    """Thinned states of one chain (arrays ``(T, n)``) or a batch (``(T, C, n)``).

    ``kinetic_integral``, ``arc_length`` and ``active_time`` are cumulative from
    the start; ``active_time`` excludes rejected steps.
    """

    times: np.ndarray
    q: np.ndarray
    p: np.ndarray
    xi: np.ndarray
    kinetic_integral: np.ndarray
    arc_length: np.ndarray
    active_time: np.ndarray
    chain_ids: np.ndarray
    scheme: str
    dt: float
    brownian_increments_consumed: int = 0
    n_rejected: int = 0
    n_halvings: int = 0
    errors: dict = field(default_factory=dict)

    @property
    def batched(self) -> bool:
        return self.xi.ndim == 2

    @property
    def states(self) -> State:
        return State(self.q, self.p, self.xi)

    def __len__(self):
        return self.times.shape[0]

    def final_state(self) -> State:
        return State(self.q[-1], self.p[-1], self.xi[-1])

    def chain(self, c: int) -> "Trajectory":
        """Single-chain view of batch member ``c``."""
        if not self.batched:
            return self
        cid = int(self.chain_ids[c])
        return Trajectory(self.times, self.q[:, c], self.p[:, c], self.xi[:, c],
                          self.kinetic_integral[:, c], self.arc_length[:, c], self.active_time[:, c],
                          np.array([cid]), self.scheme, self.dt,
                          self.brownian_increments_consumed // max(len(self.chain_ids), 1),
                          errors={cid: self.errors[cid]} if cid in self.errors else {})

    def after(self, t0: float) -> "Trajectory":
        """The part of the trajectory with ``times >= t0`` (burn-in removal)."""
        k = int(np.searchsorted(self.times, t0 - 1e-12 * max(1.0, abs(t0))))
        return dataclasses.replace(self, times=self.times[k:], q=self.q[k:], p=self.p[k:],
                                   xi=self.xi[k:], kinetic_integral=self.kinetic_integral[k:],
                                   arc_length=self.arc_length[k:], active_time=self.active_time[k:])


# ---------------------------------------------------------------------------
# single steps

def _norms(p, mv):
    k2 = np.sum(p * p / mv, axis=-1)
    return k2, np.sqrt(k2)


def step_euler_maruyama(x: State, dt: float, noise, pot, params: SystemParams, _incs: bool = False):
    """One Euler-Maruyama step; ``xi`` is advanced with the pre-step momentum.

    ``noise`` holds ``N*k`` standard normals per chain.
    """
    mv = params.mass_vector
    noise = np.asarray(noise, dtype=float)
    k2, kn = _norms(x.p, mv)
    force = pot.grad(x.q)
    q = x.q + dt * (x.p / mv)
    p = (x.p - dt * ((x.xi[..., None] + params.gamma / mv) * x.p + force)
         + math.sqrt(2.0 * params.gamma * params.kT * dt) * noise)
    xi = x.xi + dt * (k2 - params.n * params.kT) / params.a
    out = _raw_state(q, p, xi)
    if _incs:
        return out, dt * k2, dt * kn
    return out


def _raw_state(q, p, xi):
    # bypass the finiteness validation inside hot loops; callers check the domain
    s = object.__new__(State)
    object.__setattr__(s, "q", q)
    object.__setattr__(s, "p", p)
    object.__setattr__(s, "xi", xi)
    return s


def _phi1(ch):
    """``(1 - exp(-ch)) / ch`` with the removable singularity at 0."""
    small = np.abs(ch) < 1e-8
    if not small.any():
        return -np.expm1(-ch) / ch
    safe = np.where(small, 1.0, ch)
    return np.where(small, 1.0 - 0.5 * ch, -np.expm1(-safe) / safe)


def _sinhc(ch):
    small = np.abs(ch) < 1e-6
    if not small.any():
        return np.sinh(ch) / ch
    safe = np.where(small, 1.0, ch)
    return np.where(small, 1.0 + ch * ch / 6.0, np.sinh(safe) / safe)


def step_splitting(x: State, dt: float, noise, pot, params: SystemParams, _incs: bool = False):
    """Symmetric splitting ``xi/2 - B/2 - A/2 - O - A/2 - B/2 - xi/2``.

    ``B`` solves the linear momentum drift with ``xi`` and ``grad U`` frozen,
    ``O`` adds the Gaussian kick whose variance makes ``B/2 O B/2`` the exact
    Ornstein-Uhlenbeck transition for frozen coefficients, ``A`` moves the
    positions, and the two ``xi`` half-steps together integrate ``||p||_m^2``
    by the trapezoid rule.  Placing ``O`` between two position half-steps
    keeps the composition palindromic; with ``O - A`` in sequence instead the
    configurational bias is first order in ``dt``.
    """
    mv = params.mass_vector
    h = float(dt)
    noise = np.asarray(noise, dtype=float)
    kN_kT = params.n * params.kT
    k2a, kna = _norms(x.p, mv)
    xi = x.xi + 0.5 * h * (k2a - kN_kT) / params.a
    c = xi[..., None] + params.gamma / mv
    half = 0.5 * h * c
    decay = np.exp(-half)
    kick = 0.5 * h * _phi1(half)
    p = decay * x.p - kick * pot.grad(x.q)
    sigma2 = 2.0 * params.gamma * params.kT
    q = x.q + 0.5 * h * p / mv
    p = p + np.sqrt(sigma2 * h * _sinhc(h * c)) * noise
    q = q + 0.5 * h * p / mv
    p = decay * p - kick * pot.grad(q)
    k2b, knb = _norms(p, mv)
    xi = xi + 0.5 * h * (k2b - kN_kT) / params.a
    out = _raw_state(q, p, xi)
    if _incs:
        return out, 0.5 * h * (k2a + k2b), 0.5 * h * (kna + knb)
    return out


_STEPPERS = {"euler_maruyama": step_euler_maruyama, "splitting": step_splitting}


# ---------------------------------------------------------------------------
# trajectories

def _ok(pot, x: State):
    fin = (np.all(np.isfinite(x.q), axis=-1) & np.all(np.isfinite(x.p), axis=-1)
           & np.isfinite(x.xi))
    all_fin = fin.all()
    qs = x.q if all_fin else np.where(fin[..., None], x.q, 0.0)
    with np.errstate(all="ignore"):
        inside = np.isfinite(pot.value(qs))
        if not pot.full_domain:
            inside &= pot.in_domain(qs)
    return inside if all_fin else fin & inside


class _Runner:
    def __init__(self, config: IntegratorConfig, pot, params: SystemParams):
        self.cfg = config
        self.pot = pot
        self.params = params
        self.step = _STEPPERS[config.scheme]
        self.n = params.n
        self.halvings = 0
        self.rejected = 0
        self.draws = 0

    def advance(self, x: State, h: float, z, chains, step_idx, node=1, depth=0):
        """Advance chains ``x`` over ``h``; returns state, increments, time used, failure mask."""
        # trial steps outside the domain may overflow; they are detected and redone below
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            xn, dk, da = self.step(x, h, z, self.pot, self.params, _incs=True)
        good = _ok(self.pot, xn)
        dt_used = np.full(good.shape, h)
        failed = np.zeros(good.shape, bool)
        if good.all():
            return xn, dk, da, dt_used, failed
        bad = np.nonzero(~good)[0]
        q, p, xi = xn.q.copy(), xn.p.copy(), xn.xi.copy()
        dk, da = dk.copy(), da.copy()
        if self.cfg.boundary_policy == "reject_step":
            self.rejected += bad.size
            q[bad], p[bad], xi[bad] = x.q[bad], x.p[bad], x.xi[bad]
            dk[bad] = da[bad] = dt_used[bad] = 0.0
            return _raw_state(q, p, xi), dk, da, dt_used, failed
        if depth >= MAX_HALVINGS:
            q[bad], p[bad], xi[bad] = x.q[bad], x.p[bad], x.xi[bad]
            dk[bad] = da[bad] = dt_used[bad] = 0.0
            failed[bad] = True
            return _raw_state(q, p, xi), dk, da, dt_used, failed
        self.halvings += bad.size
        sub = _raw_state(x.q[bad], x.p[bad], x.xi[bad])
        z1, z2 = _rng.bridge_gaussians(self.cfg.seed, chains[bad], step_idx, self.n, node, z[bad])
        self.draws += z1.size
        s1, k1, a1, t1, f1 = self.advance(sub, 0.5 * h, z1, chains[bad], step_idx, 2 * node, depth + 1)
        # a chain whose first half failed is finished; only the others take the second half
        go = np.nonzero(~f1)[0]
        f = f1.copy()
        sq, sp, sxi = s1.q.copy(), s1.p.copy(), s1.xi.copy()
        kk, aa, tt = k1.copy(), a1.copy(), t1.copy()
        if go.size:
            s2, k2, a2, t2, f2 = self.advance(_raw_state(s1.q[go], s1.p[go], s1.xi[go]), 0.5 * h, z2[go],
                                              chains[bad][go], step_idx, 2 * node + 1, depth + 1)
            sq[go], sp[go], sxi[go] = s2.q, s2.p, s2.xi
            kk[go] += k2
            aa[go] += a2
            tt[go] += t2
            f[go] = f2
        # failed chains are frozen at the pre-step state
        fb = np.nonzero(f)[0]
        sq[fb], sp[fb], sxi[fb] = sub.q[fb], sub.p[fb], sub.xi[fb]
        kk[fb] = aa[fb] = tt[fb] = 0.0
        q[bad], p[bad], xi[bad] = sq, sp, sxi
        dk[bad], da[bad], dt_used[bad] = kk, aa, tt
        failed[bad] = f
        return _raw_state(q, p, xi), dk, da, dt_used, failed


def simulate(x0: State, config: IntegratorConfig, pot, params: SystemParams, thinning: int = 1,
             chain_ids=None, first_step: int = 0, raise_on_error: bool | None = None) -> Trajectory:
    """Integrate from ``x0`` (one chain, or a batch along the leading axis).

    The Gaussian for coordinate ``j`` of chain ``c`` at step ``s`` depends only
    on ``(seed, c, s, j)``, so results do not depend on batching or order.
    ``first_step`` offsets the step counter, which lets a run be continued.

    Raises
    ------
    StepError
        For an unbatched run whose step cannot be completed in the domain
        (the pre-step state is attached).  In batched runs failing chains are
        frozen and recorded in ``Trajectory.errors`` unless ``raise_on_error``.
    """
    if not isinstance(x0, State):
        raise ContractError("x0 must be a State")
    if x0.q.shape[-1] != params.n:
        raise ContractError(f"state has {x0.q.shape[-1]} coordinates, expected {params.n}")
    batched = x0.xi.ndim == 1
    if x0.xi.ndim > 1:
        raise ContractError("at most one batch dimension is supported")
    if not np.all(_ok(pot, x0)):
        raise ContractError("initial state lies outside the domain")
    if thinning < 1:
        raise ContractError("thinning must be >= 1")
    if raise_on_error is None:
        raise_on_error = not batched
    x = x0 if batched else State(x0.q[None], x0.p[None], x0.xi[None])
    C = x.xi.shape[0]
    chains = np.arange(C, dtype=np.uint64) if chain_ids is None else np.asarray(chain_ids, dtype=np.uint64).reshape(C)
    n_steps = int(config.n_steps)
    T = n_steps // thinning + 1
    n = params.n
    rec_q = np.empty((T, C, n))
    rec_p = np.empty((T, C, n))
    rec_xi = np.empty((T, C))
    rec_k = np.empty((T, C))
    rec_a = np.empty((T, C))
    rec_t = np.empty((T, C))
    times = np.arange(T) * (thinning * config.dt)
    kin = np.zeros(C)
    arc = np.zeros(C)
    act = np.zeros(C)
    rec_q[0], rec_p[0], rec_xi[0], rec_k[0], rec_a[0], rec_t[0] = x.q, x.p, x.xi, kin, arc, act
    alive = np.ones(C, bool)
    errors = {}
    runner = _Runner(config, pot, params)
    # noise is drawn for blocks of steps at once; values depend only on the counters
    block = max(1, min(256, 32768 // (C * n)))
    zbuf, zstart = None, 0
    for s in range(n_steps):
        step_idx = first_step + s
        idx = np.nonzero(alive)[0] if not alive.all() else None
        cur = x if idx is None else _raw_state(x.q[idx], x.p[idx], x.xi[idx])
        ch = chains if idx is None else chains[idx]
        if zbuf is None or s - zstart >= zbuf.shape[0]:
            zstart = s
            steps = first_step + np.arange(s, min(s + block, n_steps), dtype=np.uint64)
            zbuf = _rng.gaussians(config.seed, chains, steps[:, None], n)
        z = zbuf[s - zstart] if idx is None else zbuf[s - zstart][idx]
        runner.draws += z.size
        xn, dk, da, dt_used, failed = runner.advance(cur, config.dt, z, ch, step_idx)
        if idx is None:
            x = xn
            kin = kin + dk
            arc = arc + da
            act = act + dt_used
        else:
            q, p, xi = x.q.copy(), x.p.copy(), x.xi.copy()
            q[idx], p[idx], xi[idx] = xn.q, xn.p, xn.xi
            x = _raw_state(q, p, xi)
            kin[idx] += dk
            arc[idx] += da
            act[idx] += dt_used
        if failed.any():
            where = np.nonzero(failed)[0] if idx is None else idx[np.nonzero(failed)[0]]
            for c in where:
                state = State(cur.q[c if idx is None else np.searchsorted(idx, c)],
                              cur.p[c if idx is None else np.searchsorted(idx, c)],
                              cur.xi[c if idx is None else np.searchsorted(idx, c)])
                err = StepError(f"chain {int(chains[c])}: step {step_idx} left the domain after "
                                f"{MAX_HALVINGS} halvings", state=state, step=step_idx)
                if raise_on_error:
                    raise err
                errors[int(chains[c])] = err
                alive[c] = False
        if (s + 1) % thinning == 0:
            r = (s + 1) // thinning
            rec_q[r], rec_p[r], rec_xi[r] = x.q, x.p, x.xi
            rec_k[r], rec_a[r], rec_t[r] = kin, arc, act
    sq = (lambda a: a) if batched else (lambda a: a[:, 0])
    return Trajectory(times=times, q=sq(rec_q), p=sq(rec_p), xi=sq(rec_xi), kinetic_integral=sq(rec_k),
                      arc_length=sq(rec_a), active_time=sq(rec_t), chain_ids=chains.astype(np.int64),
                      scheme=config.scheme, dt=config.dt, brownian_increments_consumed=runner.draws,
                      n_rejected=runner.rejected, n_halvings=runner.halvings, errors=errors)


def ensemble_run(x0s, config: IntegratorConfig, pot, params: SystemParams, thinning: int = 1,
                 chain_ids=None, workers: int = 1, batch_size: int = 4096) -> list:
    """Run independent chains; returns one :class:`Trajectory` (or the error) per chain.

    Chains are advanced in vectorized batches, optionally on a thread pool.
    Chain ``i`` uses stream ``chain_ids[i]`` (default ``i``), so the output is
    the same for any ``workers`` and ``batch_size``.
    """
    x0 = x0s if isinstance(x0s, State) else State.stack(list(x0s))
    C = x0.xi.shape[0]
    ids = np.arange(C) if chain_ids is None else np.asarray(chain_ids)
    blocks = [np.arange(i, min(i + batch_size, C)) for i in range(0, C, batch_size)]

    def run(block):
        return simulate(x0[block], config, pot, params, thinning, chain_ids=ids[block],
                        raise_on_error=False)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run, blocks))
    else:
        results = [run(b) for b in blocks]
    out = []
    for block, tr in zip(blocks, results):
        for j in range(len(block)):
            cid = int(tr.chain_ids[j])
            out.append(tr.errors[cid] if cid in tr.errors else tr.chain(j))
    return out


# ---------------------------------------------------------------------------
# pathwise checks

def xi_identity_error(traj: Trajectory, params: SystemParams) -> float:
    """Largest relative deviation from ``xi_t - xi_0 = (K_t - t kN/beta)/a``.

    Deviations are scaled by ``(K_t + t kN/beta)/a``, the sum of the magnitudes
    of the two contributions.
    """
    drain = traj.active_time * params.n * params.kT
    lhs = traj.xi - traj.xi[0]
    rhs = (traj.kinetic_integral - drain) / params.a
    scale = (traj.kinetic_integral + drain) / params.a
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(scale > 0, np.abs(lhs - rhs) / np.where(scale > 0, scale, 1.0), np.abs(lhs - rhs))
    return float(np.max(rel))


def support_bound_violations(traj: Trajectory, params: SystemParams, rtol: float = 1e-9) -> int:
    """Count states violating ``xi_t >= xi_0 + L_t^2/(a t) - t kN/(a beta)``.

    ``L_t`` is the discrete arc length.  A deviation within ``rtol`` times the
    magnitude of the terms is attributed to rounding.
    """
    t = traj.active_time
    drain = t * params.n * params.kT / params.a
    with np.errstate(invalid="ignore", divide="ignore"):
        jensen = np.where(t > 0, traj.arc_length ** 2 / (params.a * np.where(t > 0, t, 1.0)), 0.0)
    bound = traj.xi[0] + jensen - drain
    slack = traj.xi - bound
    scale = np.abs(traj.xi[0]) + jensen + drain + np.abs(traj.xi)
    return int(np.sum(slack < -rtol * np.maximum(scale, 1e-300)))
