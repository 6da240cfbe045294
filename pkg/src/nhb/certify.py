"""Numerical certification of the drift conditions on energy shells.

States are sampled by region: the ``xi``, ``|p|^2`` and ``|grad U|^2`` coordinates
are drawn relative to the cutoff scales, so the transition zones of every
cutoff are hit deliberately instead of by chance.  Positions with a prescribed
``U`` or ``|grad U|^2`` are found by bisection along random rays from the
potential's anchor point.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .lyapunov import LyapunovParams, V_and_W, drift_ratio, region_labels, select_params
from .model import State, SystemParams, hamiltonian

__all__ = ["CertReport", "sample_shell", "drift_certify", "escalate", "STRATA"]

# name: (xi range, s_p range, s_g range); s_p = |p|^2/(p* sqrt(xi^2+1)),
# s_g = |grad U|^2/(U* (xi^2+1)).  Symbolic bounds are resolved per parameter set.
STRATA = {
    "R0_xi": (("K", "max"), None, None),
    "R0_p": (("-max", "max"), (2.0, "pmax"), None),
    "R1": (("-max", "K"), (0.0, 1.0), (2.0, "gmax")),
    "R1_f1": (("K", "K+1"), (0.0, 2.0), (1.0, "gmax")),
    "R1_f2": (("-max", "K+1"), (1.0, 2.0), (1.0, "gmax")),
    "R1_f3": (("-max", "K+1"), (0.0, 2.0), (1.0, 2.0)),
    "R2": (("-max", "-x-1"), (0.0, 1.0), (0.0, 3.0)),
    "R2_h1": (("-x-1", "-x"), (0.0, 2.0), (0.0, 4.0)),
    "R2_h2": (("-max", "-x"), (1.0, 2.0), (0.0, 4.0)),
    "R2_h3": (("-max", "-x"), (0.0, 2.0), (3.0, 4.0)),
    "f0": ((-1.0, 0.0), None, None),
    "gap": (("-x", -1.0), (0.0, 2.0), (0.0, 1.0)),
    "partition": (None, None, None),
}


def _unit_vectors(rng, m, n):
    v = rng.normal(size=(m, n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _ray_solve(pot, target, fn, rng, lam0=1e-3, doublings=80, iters=80):
    """Points ``anchor + lam d`` with ``fn = target`` (first crossing along a random ray).

    Returns positions and a mask of successes.
    """
    m = target.shape[0]
    n = pot.n
    d = _unit_vectors(rng, m, n)
    a = pot.anchor
    lo = np.zeros(m)
    hi = np.full(m, np.nan)
    lam = lam0
    found = np.zeros(m, dtype=bool)
    for _ in range(doublings):
        q = a + lam * d
        with np.errstate(all="ignore"):
            f = fn(q)
        ok = np.isfinite(f) & pot.in_domain(q)
        hit = ~found & ok & (f >= target)
        hi[hit] = lam
        lo[~found & ok & ~hit] = lam
        found |= hit
        if found.all():
            break
        lam *= 2.0
    hi = np.where(found, hi, lo + 1.0)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        with np.errstate(all="ignore"):
            f = fn(a + mid[:, None] * d)
        up = ~np.isfinite(f) | (f >= target)
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    q = a + hi[:, None] * d
    return q, found


def _loguniform(rng, lo, hi, m):
    lo = max(lo, 1e-12)
    return np.exp(rng.uniform(math.log(lo), math.log(max(hi, lo * (1 + 1e-12))), m))


def _signed_range(rng, lo, hi, m):
    """Sample in [lo, hi] log-uniformly in |xi| on each side of zero."""
    if lo >= 0:
        return _loguniform(rng, max(lo, 1e-6), hi, m)
    if hi <= 0:
        return -_loguniform(rng, max(-hi, 1e-6), -lo, m)
    neg = rng.random(m) < (-lo) / (hi - lo)
    out = _loguniform(rng, 1e-6, hi, m)
    out[neg] = -_loguniform(rng, 1e-6, -lo, int(neg.sum()))
    return out


def _resolve(v, lp, xmax, gmax, pmax):
    if not isinstance(v, str):
        return float(v)
    return {"max": xmax, "-max": -xmax, "K": lp.K_star, "K+1": lp.K_star + 1.0,
            "-x": -lp.xi_star, "-x-1": -lp.xi_star - 1.0, "gmax": gmax, "pmax": pmax}[v]


def _gradsq(pot):
    return lambda q: np.sum(pot.grad(q) ** 2, axis=-1)


def _gmax2(pot, R_hi, rng, rays=64):
    """Four times the largest ``|grad U|^2`` seen on the level set ``U = R_hi``."""
    q, ok = _ray_solve(pot, np.full(rays, R_hi), pot.value, rng)
    return 4.0 * float(np.max(np.sum(pot.grad(q[ok]) ** 2, axis=-1))) if ok.any() else 4.0 * R_hi ** 2


def _draw(name, m, shell, pot, lp, params, rng):
    R_lo, R_hi = shell
    n = pot.n
    a, mv = params.a, params.mass_vector
    xmax = math.sqrt(2.0 * R_hi / a)
    xr, pr, gr = STRATA[name]
    if xr is None:
        # random split of a target energy among the three terms
        Ht = _loguniform(rng, R_lo, R_hi, m)
        w = rng.dirichlet([0.3, 0.3, 0.3], size=m)
        xi = np.sqrt(2.0 * w[:, 0] * Ht / a) * rng.choice([-1.0, 1.0], m)
        kin = w[:, 1] * Ht
        u = w[:, 2] * Ht
        pdir = _unit_vectors(rng, m, n)
        pr_ = np.sqrt(2.0 * kin / np.sum(pdir ** 2 / mv, axis=1))
        p = pdir * pr_[:, None]
        q, ok = _ray_solve(pot, u, pot.value, rng)
        return State(q[ok], p[ok], xi[ok])
    lo, hi = (_resolve(v, lp, xmax, 0, 0) for v in xr)
    lo, hi = max(lo, -xmax), min(hi, xmax)
    if lo >= hi:
        return None
    xi = _signed_range(rng, lo, hi, m)
    s2 = xi ** 2 + 1.0
    pdir = _unit_vectors(rng, m, n)
    if pr is None:
        kin = _loguniform(rng, 1e-6, R_hi, m)
        p = pdir * np.sqrt(2.0 * kin / np.sum(pdir ** 2 / mv, axis=1))[:, None]
    else:
        pmax = 2.0 * R_hi * float(mv.max()) / (lp.p_star * np.sqrt(s2))
        plo = float(pr[0])
        if pr[1] == "pmax":
            sp = np.exp(rng.uniform(math.log(plo), np.log(np.maximum(pmax, plo * 1.0001))))
        else:
            sp = plo + (np.minimum(float(pr[1]), pmax) - plo) * rng.random(m)
        p = pdir * np.sqrt(np.maximum(sp, 0.0) * lp.p_star * np.sqrt(s2))[:, None]
    if gr is None:
        u = _loguniform(rng, 1e-6, R_hi, m)
        q, ok = _ray_solve(pot, u, pot.value, rng)
    else:
        glo = _resolve(gr[0], lp, xmax, 0, 0)
        if gr[1] == "gmax":
            gt = np.exp(rng.uniform(np.log(glo * lp.U_star * s2),
                                    np.log(np.maximum(_gmax2(pot, R_hi, rng), 1.0001 * glo * lp.U_star * s2))))
        else:
            sg = glo + (float(gr[1]) - glo) * rng.random(m)
            gt = sg * lp.U_star * s2
        q, ok = _ray_solve(pot, gt, _gradsq(pot), rng)
    return State(q[ok], p[ok], xi[ok])


def sample_shell(pot, lp: LyapunovParams, params: SystemParams, shell, n_samples: int,
                 seed: int = 0, strata=None, max_rounds: int = 200):
    """Stratified states with ``R_lo <= H <= R_hi``.

    Each stratum receives an equal quota; a stratum that cannot reach the
    shell (empty intersection) is skipped.  Returns ``(State, stratum index array, names)``.
    """
    R_lo, R_hi = map(float, shell)
    if not (0 <= R_lo < R_hi):
        raise ContractError("shell must satisfy 0 <= R_lo < R_hi")
    rng = np.random.default_rng(seed)
    names = list(STRATA) if strata is None else list(strata)
    quota = {i: int(math.ceil(n_samples / len(names))) for i in range(len(names))}
    got = {i: 0 for i in range(len(names))}
    dead = set()
    qs, ps, xs, tags = [], [], [], []
    # strata that cannot reach the shell hand their quota to the others
    for _ in range(4):
        for ti, name in enumerate(names):
            if ti in dead:
                continue
            for _ in range(max_rounds):
                need = quota[ti] - got[ti]
                if need <= 0:
                    break
                batch = _draw(name, max(4 * need, 256), (R_lo, R_hi), pot, lp, params, rng)
                if batch is None:
                    dead.add(ti)
                    break
                if batch.q.shape[0] == 0:
                    continue
                with np.errstate(over="ignore"):
                    U = pot.value(batch.q)
                    H = 0.5 * np.sum(batch.p ** 2 / params.mass_vector, axis=1) + U + 0.5 * params.a * batch.xi ** 2
                keep = np.nonzero(np.isfinite(H) & (H >= R_lo) & (H <= R_hi))[0][:need]
                qs.append(batch.q[keep])
                ps.append(batch.p[keep])
                xs.append(batch.xi[keep])
                tags.append(np.full(keep.size, ti))
                got[ti] += keep.size
            else:
                dead.add(ti)
        deficit = n_samples - sum(got.values())
        live = [i for i in range(len(names)) if i not in dead]
        if deficit <= 0 or not live:
            break
        for i in live:
            quota[i] += int(math.ceil(deficit / len(live)))
    if not qs:
        raise ContractError("no states could be placed in the shell")
    x = State(np.concatenate(qs), np.concatenate(ps), np.concatenate(xs))
    return x, np.concatenate(tags), names


def _chunked(fn, x: State, size=50000):
    out = [fn(x[i:i + size]) for i in range(0, x.xi.shape[0], size)]
    return np.concatenate(out)


@dataclass
class CertReport:
    """Outcome of a certification sweep (all exponentials kept in log form)."""

    passed: bool
    alpha: float
    shell: tuple
    compact_R: float | None
    n_samples: int
    n_outside: int
    n_violations: int
    n_sandwich_violations: int
    max_drift_outside: float
    logK: float | None
    logK_bound: float | None
    region_counts: dict
    region_max_drift: dict
    stratum_counts: dict
    worst: list
    lyapunov: dict
    system: dict
    rounds: list = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["shell"] = list(self.shell)
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), default=float, **kw)


def _state_dict(x: State, i: int) -> dict:
    return {"q": x.q[i].tolist(), "p": x.p[i].tolist(), "xi": float(x.xi[i])}


def drift_certify(pot, lp: LyapunovParams, params: SystemParams, shell, n_samples: int,
                  compact_R: float | None = None, seed: int = 0, n_worst: int = 10) -> CertReport:
    """Check ``drift_ratio <= -alpha`` and the sandwich on stratified shell samples.

    Samples with ``H >= compact_R`` (all samples when ``compact_R`` is None)
    must satisfy the drift bound; the others contribute to
    ``K = max (L W + alpha W)``, reported as ``logK``; the compact set
    ``H < compact_R`` is sampled separately for this.  ``logK_bound`` replaces
    the sampled ``W`` by its sandwich bound ``exp((beta0+eps0) compact_R)`` and
    doubles the largest sampled excess ``drift + alpha``.
    """
    x, tags, names = sample_shell(pot, lp, params, shell, n_samples, seed)
    H = hamiltonian(x, pot, params)
    d = _chunked(lambda s: drift_ratio(s, pot, lp, params), x)
    V = _chunked(lambda s: V_and_W(s, pot, lp, params)[0], x)
    lab = region_labels(x, pot, lp, params)
    outside = np.ones(H.shape, bool) if compact_R is None else H >= compact_R
    viol = outside & ~(d <= -lp.alpha)
    sandwich = ~((V >= (lp.beta0 - lp.eps0) * H) & (V <= (lp.beta0 + lp.eps0) * H))
    logK = logK_bound = None
    if compact_R is not None:
        # K is a supremum over the compact set itself, so sample it directly too
        xk, _, _ = sample_shell(pot, lp, params, (0.0, compact_R), max(n_samples // 4, 1000), seed + 1)
        Hk = np.concatenate([hamiltonian(xk, pot, params), H[~outside]])
        dk = np.concatenate([_chunked(lambda s: drift_ratio(s, pot, lp, params), xk), d[~outside]])
        Vk = np.concatenate([_chunked(lambda s: V_and_W(s, pot, lp, params)[0], xk), V[~outside]])
        excess = dk + lp.alpha
        pos = excess > 0
        if pos.any():
            logK = float(np.max(Vk[pos] + np.log(excess[pos])))
            logK_bound = float((lp.beta0 + lp.eps0) * compact_R + np.log(2.0 * excess.max()))
        else:
            logK = logK_bound = -np.inf
    bad = np.nonzero(viol | sandwich)[0]
    order = bad[np.argsort(-d[bad])][:n_worst]
    worst = [dict(_state_dict(x, i), H=float(H[i]), drift=float(d[i]), region=int(lab[i]),
                  stratum=names[tags[i]], sandwich_ok=bool(not sandwich[i])) for i in order]
    region_counts = {str(r): int(np.sum(lab == r)) for r in range(4)}
    region_max = {str(r): (float(np.max(d[lab == r])) if np.any(lab == r) else None) for r in range(4)}
    strata = {nm: int(np.sum(tags == i)) for i, nm in enumerate(names)}
    passed = (not viol.any()) and (not sandwich.any())
    msg = "PASS" if passed else f"FAIL: {int(viol.sum())} drift and {int(sandwich.sum())} sandwich violations"
    return CertReport(passed=passed, alpha=lp.alpha, shell=(float(shell[0]), float(shell[1])),
                      compact_R=compact_R, n_samples=int(H.size), n_outside=int(outside.sum()),
                      n_violations=int(viol.sum()), n_sandwich_violations=int(sandwich.sum()),
                      max_drift_outside=float(d[outside].max()) if outside.any() else -np.inf,
                      logK=logK, logK_bound=logK_bound, region_counts=region_counts,
                      region_max_drift=region_max, stratum_counts=strata, worst=worst,
                      lyapunov=lp.to_dict(), system=params.to_dict(), message=msg)


def _culprits(x: State, pot, lp: LyapunovParams) -> set:
    """Which cutoff scales to grow, judged from violating states."""
    g = np.sum(pot.grad(x.q) ** 2, axis=-1)
    s2 = x.xi ** 2 + 1.0
    sp = np.sum(x.p ** 2, axis=-1) / (lp.p_star * np.sqrt(s2))
    out = set()
    if np.any((sp > 0.9) & (sp < 2.1)):
        out.add("p_star")
    if np.any(x.xi < -lp.xi_star + 1.0):
        out.add("xi_star")
    if np.any((x.xi >= -lp.xi_star + 1.0) & (g > lp.U_star * s2 * 0.9)):
        out.add("U_star")
    return out or {"U_star"}


def escalate(pot, params: SystemParams, alpha: float, beta0: float, eps0: float,
             seeds=(32.0, 4096.0, 32.0), n_samples: int = 100000, explore_hi: float = 1e10,
             n_explore: int = 60000, max_rounds: int = 20, seed: int = 0, log=None):
    """Grow ``p_star, U_star, xi_star`` by factors of 2 until certification passes.

    Each round first sweeps energies ``[1, explore_hi]`` to locate the largest
    violating energy ``H_v``; the candidate compact set is ``H < R`` with
    ``R = 2 H_v``.  If violations reach the top decade of the sweep, or the
    certification on ``[R, 10 R]`` fails, the scales implicated by the
    violating states are doubled.  Returns ``(LyapunovParams, CertReport)``.
    """
    p_star, U_star, xi_star = map(float, seeds)
    lp = select_params(alpha, beta0, eps0, pot, params, p_star, U_star, xi_star)
    history = []
    report = None
    for rnd in range(max_rounds):
        xs, _, _ = sample_shell(pot, lp, params, (1.0, explore_hi), n_explore, seed + 7919 * rnd)
        H = hamiltonian(xs, pot, params)
        d = _chunked(lambda s: drift_ratio(s, pot, lp, params), xs)
        V = _chunked(lambda s: V_and_W(s, pot, lp, params)[0], xs)
        bad = ~(d <= -lp.alpha) | ~(np.abs(V - lp.beta0 * H) <= lp.eps0 * H)
        Hv = float(H[bad].max()) if bad.any() else 1.0
        entry = {"round": rnd, "p_star": lp.p_star, "U_star": lp.U_star, "xi_star": lp.xi_star,
                 "explore_max_violating_H": Hv}
        grow = None
        if Hv > explore_hi / 10.0:
            top = bad & (H > explore_hi / 10.0)
            grow = _culprits(xs[np.nonzero(top)[0]], pot, lp)
            entry["outcome"] = "violations reach the top of the sweep"
        else:
            R = max(2.0 * Hv, 10.0)
            report = drift_certify(pot, lp, params, (R, 10.0 * R), n_samples, compact_R=R,
                                   seed=seed + 104729 * (rnd + 1))
            entry.update(R=R, outcome=report.message)
            if report.passed:
                history.append(entry)
                report.rounds = history
                if log:
                    log(entry)
                return lp, report
            w = report.worst
            grow = _culprits(State(np.array([s["q"] for s in w]), np.array([s["p"] for s in w]),
                                   np.array([s["xi"] for s in w])), pot, lp)
        entry["grow"] = sorted(grow)
        history.append(entry)
        if log:
            log(entry)
        lp = lp.replace(**{k: 2.0 * getattr(lp, k) for k in grow})
    if report is None:
        report = drift_certify(pot, lp, params, (explore_hi / 10, explore_hi), n_samples,
                               compact_R=None, seed=seed)
    report.rounds = history
    report.passed = False
    report.message = "FAIL: escalation budget exhausted; " + report.message
    return lp, report
