"""State and parameter types, and the library of normal potentials.

Positions and momenta are flat arrays of ``N * k`` coordinates, particle-major
(``q[i*k + l]`` is component ``l`` of particle ``i``).  Every array argument may
carry leading batch dimensions; the trailing axis is always the coordinate axis.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .errors import ContractError, DomainError, PotentialError

__all__ = [
    "SystemParams",
    "State",
    "Potential",
    "PotentialSpec",
    "SpotcheckReport",
    "kinetic_energy",
    "hamiltonian",
    "make_potential",
    "normality_spotcheck",
]


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the thermostatted system.

    Parameters
    ----------
    N, k : int
        Particle count and spatial dimension.
    m : tuple of float
        Particle masses, length ``N``.
    gamma, kB, T, a : float
        Friction, Boltzmann constant, temperature and thermostat inertia.
    """

    N: int = 1
    k: int = 1
    m: tuple = (1.0,)
    gamma: float = 1.0
    kB: float = 1.0
    T: float = 1.0
    a: float = 1.0

    def __post_init__(self):
        m = tuple(float(v) for v in np.atleast_1d(self.m))
        object.__setattr__(self, "m", m)
        if int(self.N) < 1 or int(self.k) < 1:
            raise ContractError("N and k must be >= 1")
        if len(m) != self.N:
            raise ContractError(f"mass vector has length {len(m)}, expected N={self.N}")
        if not all(v > 0 and math.isfinite(v) for v in m):
            raise ContractError("all masses must be positive and finite")
        for name in ("gamma", "kB", "T", "a"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ContractError(f"{name} must be positive and finite, got {v}")

    @property
    def beta(self) -> float:
        return 1.0 / (self.kB * self.T)

    @property
    def kT(self) -> float:
        return self.kB * self.T

    @property
    def n(self) -> int:
        """Number of position coordinates, ``N * k``."""
        return self.N * self.k

    @functools.cached_property
    def mass_vector(self) -> np.ndarray:
        """Per-coordinate masses, length ``N * k`` (read-only)."""
        mv = np.repeat(np.asarray(self.m, dtype=float), self.k)
        mv.flags.writeable = False
        return mv

    @property
    def K1(self) -> float:
        """``gamma * sum_i 1/m_i``."""
        return self.gamma * sum(1.0 / v for v in self.m)

    def to_dict(self) -> dict:
        return {"N": self.N, "k": self.k, "m": list(self.m), "gamma": self.gamma,
                "kB": self.kB, "T": self.T, "a": self.a}


@dataclass(frozen=True)
class State:
    """A phase-space point ``(q, p, xi)``, or a batch of them.

    ``q`` and ``p`` have shape ``(..., n)`` and ``xi`` has shape ``(...)``.
    """

    q: np.ndarray
    p: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        p = np.asarray(self.p, dtype=float)
        xi = np.asarray(self.xi, dtype=float)
        if q.ndim == 0:
            q = q.reshape(1)
        if p.ndim == 0:
            p = p.reshape(1)
        if q.shape != p.shape:
            raise ContractError(f"q shape {q.shape} != p shape {p.shape}")
        if xi.shape != q.shape[:-1]:
            raise ContractError(f"xi shape {xi.shape} does not match batch shape {q.shape[:-1]}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p)) and np.all(np.isfinite(xi))):
            raise ContractError("state has non-finite coordinates")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "xi", xi)

    @property
    def batch_shape(self) -> tuple:
        return self.xi.shape

    def __len__(self):
        if self.xi.ndim == 0:
            raise TypeError("unbatched State has no length")
        return self.xi.shape[0]

    def __getitem__(self, idx) -> "State":
        return State(self.q[idx], self.p[idx], self.xi[idx])

    @classmethod
    def stack(cls, states) -> "State":
        return cls(np.stack([s.q for s in states]), np.stack([s.p for s in states]),
                   np.stack([s.xi for s in states]))

    @classmethod
    def repeat(cls, x: "State", count: int) -> "State":
        return cls(np.broadcast_to(x.q, (count,) + x.q.shape).copy(),
                   np.broadcast_to(x.p, (count,) + x.p.shape).copy(),
                   np.full((count,) + x.xi.shape, x.xi))


def _check_coords(arr: np.ndarray, params: SystemParams, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] != params.n:
        raise ContractError(f"{what} must have trailing length N*k={params.n}, got shape {arr.shape}")
    return arr


def kinetic_energy(p, params: SystemParams) -> np.ndarray:
    """Kinetic energy ``(1/2) sum_i |p_i|^2 / m_i``."""
    p = _check_coords(p, params, "p")
    return 0.5 * np.sum(p * p / params.mass_vector, axis=-1)


def hamiltonian(x: State, pot: "Potential", params: SystemParams) -> np.ndarray:
    """Total energy ``||p||_m^2/2 + U(q) + a xi^2/2``.

    Raises
    ------
    DomainError
        If any configuration lies outside the potential's domain.
    """
    _check_coords(x.q, params, "q")
    u = pot.value(x.q)
    if not np.all(np.isfinite(u)):
        raise DomainError("q lies outside the potential's domain (U = +inf)")
    return kinetic_energy(x.p, params) + u + 0.5 * params.a * x.xi ** 2


class Potential:
    """A normal potential with analytically coded derivatives.

    ``value`` returns ``+inf`` outside the domain; ``grad`` and ``hess`` are only
    meaningful inside it.
    """

    def __init__(self, name: str, n: int, value: Callable, grad: Callable, hess: Callable,
                 *, zeta: float, in_domain: Callable | None = None, convex_domain: bool = True,
                 anchor=None, spec: "PotentialSpec | None" = None):
        if not (1.0 < zeta < 2.0):
            raise PotentialError(f"zeta must lie in (1, 2), got {zeta}")
        self.name = name
        self.n = int(n)
        self._value = value
        self._grad = grad
        self._hess = hess
        self._in_domain = in_domain
        self.zeta = float(zeta)
        self.is_convex_domain = bool(convex_domain)
        self.full_domain = in_domain is None
        self.anchor = np.zeros(self.n) if anchor is None else np.asarray(anchor, dtype=float)
        self.spec = spec

    def __repr__(self):
        return f"Potential({self.name!r}, n={self.n}, zeta={self.zeta})"

    def in_domain(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self._in_domain is None:
            return np.ones(q.shape[:-1], dtype=bool)
        return self._in_domain(q)

    def value(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self._in_domain is None:
            return self._value(q)
        inside = self._in_domain(q)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            u = self._value(q)
        return np.where(inside & np.isfinite(u), u, np.inf)

    def grad(self, q) -> np.ndarray:
        return self._grad(np.asarray(q, dtype=float))

    def hess(self, q) -> np.ndarray:
        return self._hess(np.asarray(q, dtype=float))


# ---------------------------------------------------------------------------
# built-in potentials

_KINDS = {
    "harmonic": {"c"},
    "double_well": {"c1", "c2", "c3"},
    "polynomial": {"coefficients", "shift"},
    "lennard_jones": {"epsilon", "r0", "confine"},
}


@dataclass(frozen=True)
class PotentialSpec:
    """Serializable description of a built-in potential.

    ``kind`` is one of ``harmonic`` (``c||q||^2``), ``double_well``
    (``sum_j c1 q_j^4 - c2 q_j^2 + c3``), ``polynomial`` (a 1-D polynomial with
    ascending ``coefficients`` applied to each coordinate) or ``lennard_jones``
    (pair term ``epsilon((r0/r)^12 - 2(r0/r)^6 + 1)`` plus ``confine * ||q||^2``).
    """

    kind: str
    N: int = 1
    k: int = 1
    coeffs: dict = field(default_factory=dict)
    zeta: float | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "PotentialSpec":
        d = dict(d)
        allowed = {"kind", "N", "k", "zeta"}
        kind = d.get("kind")
        if kind not in _KINDS:
            raise PotentialError(f"unknown potential kind {kind!r}; expected one of {sorted(_KINDS)}")
        unknown = set(d) - allowed - _KINDS[kind]
        if unknown:
            raise PotentialError(f"unknown keys for {kind} potential: {sorted(unknown)}")
        coeffs = {key: d[key] for key in _KINDS[kind] if key in d}
        return cls(kind=kind, N=int(d.get("N", 1)), k=int(d.get("k", 1)), coeffs=coeffs,
                   zeta=d.get("zeta"))

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "N": self.N, "k": self.k, **self.coeffs}
        if self.zeta is not None:
            out["zeta"] = self.zeta
        return out


def _separable_polynomial(coeffs, n, name, zeta, spec, shift=None):
    """Potential ``sum_j P(q_j) + shift_total`` for a 1-D polynomial ``P``."""
    c = np.trim_zeros(np.asarray(coeffs, dtype=float), "b")
    if c.size < 2:
        raise PotentialError("polynomial must have degree >= 2")
    deg = c.size - 1
    if deg % 2 == 1:
        raise PotentialError(f"polynomial degree {deg} is odd; U would be unbounded below")
    if c[-1] <= 0:
        raise PotentialError("leading coefficient must be positive (non-integrable tail otherwise)")
    crit = np.polynomial.polynomial.polyroots(np.polynomial.polynomial.polyder(c))
    crit = crit[np.abs(crit.imag) < 1e-9].real
    vals = np.polynomial.polynomial.polyval(crit, c)
    pmin = float(vals.min())
    argmin = float(crit[np.argmin(vals)])
    if shift is None:
        shift = -pmin
    elif pmin + shift < -1e-12:
        raise PotentialError(f"shift {shift} leaves U negative (min of polynomial is {pmin})")
    c = c.copy()
    c[0] += shift
    d1 = np.polynomial.polynomial.polyder(c)
    d2 = np.polynomial.polynomial.polyder(d1)
    pv = np.polynomial.polynomial.polyval

    def value(q):
        return np.sum(pv(q, c), axis=-1)

    def grad(q):
        return pv(q, d1)

    def hess(q):
        h = pv(q, d2)
        out = np.zeros(q.shape + (n,))
        idx = np.arange(n)
        out[..., idx, idx] = h
        return out

    return Potential(name, n, value, grad, hess, zeta=zeta, anchor=np.full(n, argmin), spec=spec)


def _pair_indices(N):
    return [(i, j) for i in range(N) for j in range(i + 1, N)]


def _lennard_jones(N, k, eps, r0, confine, zeta, spec):
    if N < 2:
        raise PotentialError("Lennard-Jones potential needs N >= 2 particles")
    if confine <= 0:
        raise PotentialError("confinement must be positive for compact sublevel sets")
    if eps <= 0 or r0 <= 0:
        raise PotentialError("epsilon and r0 must be positive")
    n = N * k
    pairs = _pair_indices(N)

    def diffs(q):
        qq = q.reshape(q.shape[:-1] + (N, k))
        for i, j in pairs:
            d = qq[..., i, :] - qq[..., j, :]
            yield i, j, d, np.sqrt(np.sum(d * d, axis=-1))

    def in_domain(q):
        ok = np.ones(q.shape[:-1], dtype=bool)
        for _, _, _, r in diffs(q):
            ok &= r > 0
        return ok

    def value(q):
        u = confine * np.sum(q * q, axis=-1)
        with np.errstate(divide="ignore", over="ignore"):
            for _, _, _, r in diffs(q):
                s6 = (r0 / r) ** 6
                u = u + eps * (s6 - 1.0) ** 2
        return u

    def grad(q):
        g = (2.0 * confine * q).reshape(q.shape[:-1] + (N, k))
        for i, j, d, r in diffs(q):
            s6 = (r0 / r) ** 6
            dphi = eps * (-12.0 * s6 * (s6 - 1.0)) / r  # phi'(r)
            f = (dphi / r)[..., None] * d
            g[..., i, :] += f
            g[..., j, :] -= f
        return g.reshape(q.shape)

    def hess(q):
        h = np.zeros(q.shape[:-1] + (n, n))
        idx = np.arange(n)
        h[..., idx, idx] = 2.0 * confine
        eye = np.eye(k)
        for i, j, d, r in diffs(q):
            s6 = (r0 / r) ** 6
            dphi = eps * (-12.0 * s6 * (s6 - 1.0)) / r
            d2phi = eps * (12.0 * s6 * (13.0 * s6 - 7.0)) / r ** 2
            u = d / r[..., None]
            uu = u[..., :, None] * u[..., None, :]
            block = d2phi[..., None, None] * uu + (dphi / r)[..., None, None] * (eye - uu)
            si, sj = slice(i * k, (i + 1) * k), slice(j * k, (j + 1) * k)
            h[..., si, si] += block
            h[..., sj, sj] += block
            h[..., si, sj] -= block
            h[..., sj, si] -= block
        return h

    # a local minimizer to anchor level-set searches
    start = np.zeros((N, k))
    start[:, 0] = r0 * (np.arange(N) - (N - 1) / 2.0)
    # line searches may probe through a collision; the result is checked below
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        res = optimize.minimize(lambda x: float(value(x)), start.ravel(),
                                jac=lambda x: grad(x), method="BFGS")
    anchor = res.x if np.isfinite(res.fun) and in_domain(res.x) else start.ravel()
    return Potential("lennard_jones", n, value, grad, hess, zeta=zeta, in_domain=in_domain,
                     convex_domain=False, anchor=anchor, spec=spec)


def _check_integrable(pot: Potential, beta: float):
    """Quadrature check that ``exp(-beta U)`` has a finite positive integral (n <= 2)."""
    if pot.n == 1:
        f = lambda x: float(np.exp(-beta * pot.value(np.array([x]))))
        val, _ = integrate.quad(f, -np.inf, np.inf, limit=200)
    elif pot.n == 2:
        f = lambda y, x: float(np.exp(-beta * pot.value(np.array([x, y]))))
        val, _ = integrate.dblquad(f, -np.inf, np.inf, -np.inf, np.inf)
    else:
        return None
    if not (np.isfinite(val) and val > 0):
        raise PotentialError(f"exp(-beta U) is not integrable (quadrature gave {val})")
    return val


def make_potential(spec: PotentialSpec | dict, beta: float = 1.0, check: bool = True) -> Potential:
    """Build a built-in potential from its specification.

    For ``N*k <= 2`` the integrability of ``exp(-beta U)`` is verified by
    adaptive quadrature; larger systems are trusted.
    """
    if isinstance(spec, dict):
        spec = PotentialSpec.from_dict(spec)
    n = spec.N * spec.k
    c = spec.coeffs
    if spec.kind == "harmonic":
        cc = float(c.get("c", 0.5))
        if cc <= 0:
            raise PotentialError("harmonic coefficient must be positive (non-integrable tail otherwise)")
        pot = _separable_polynomial([0.0, 0.0, cc], n, "harmonic", spec.zeta or 1.5, spec, shift=0.0)
        pot.anchor = np.zeros(n)
    elif spec.kind == "double_well":
        c1, c2 = float(c.get("c1", 0.25)), float(c.get("c2", 0.5))
        if c1 <= 0:
            raise PotentialError("double-well quartic coefficient must be positive")
        floor = c2 * c2 / (4.0 * c1) if c2 > 0 else 0.0
        c3 = float(c["c3"]) if "c3" in c else floor
        if c3 < floor - 1e-12:
            raise PotentialError(f"c3={c3} leaves U negative; need c3 >= c2^2/(4 c1) = {floor}")
        pot = _separable_polynomial([c3, 0.0, -c2, 0.0, c1], n, "double_well", spec.zeta or 1.5,
                                    spec, shift=0.0)
    elif spec.kind == "polynomial":
        if "coefficients" not in c:
            raise PotentialError("polynomial potential needs 'coefficients'")
        pot = _separable_polynomial(c["coefficients"], n, "polynomial", spec.zeta or 1.5, spec,
                                    shift=c.get("shift"))
    elif spec.kind == "lennard_jones":
        pot = _lennard_jones(spec.N, spec.k, float(c.get("epsilon", 1.0)), float(c.get("r0", 1.0)),
                             float(c.get("confine", 0.5)), spec.zeta or 1.9, spec)
    else:
        raise PotentialError(f"unknown potential kind {spec.kind!r}")
    if check:
        _check_integrable(pot, beta)
    return pot


# ---------------------------------------------------------------------------
# (A4) spot check

@dataclass
class SpotcheckReport:
    U: np.ndarray
    grad_norm: np.ndarray
    ratio: np.ndarray
    zeta: float
    passed: bool
    message: str

    def to_dict(self):
        d = dataclasses.asdict(self)
        for key in ("U", "grad_norm", "ratio"):
            d[key] = [float(v) for v in d[key]]
        return d


def _auto_probe(pot: Potential, n_points: int) -> np.ndarray:
    if pot.is_convex_domain:
        direction = np.ones(pot.n) / math.sqrt(pot.n)
        lam = np.logspace(0, 3, n_points)
        return pot.anchor + lam[:, None] * direction
    # push the first particle onto the second one
    q0 = pot.anchor.copy()
    k = pot.spec.k if pot.spec is not None else 1
    d = q0[:k] - q0[k:2 * k]
    r = np.linalg.norm(d)
    scale = np.logspace(0, -1.5, n_points)
    probe = np.repeat(q0[None, :], n_points, axis=0)
    probe[:, :k] = q0[k:2 * k] + scale[:, None] * d
    del r
    return probe


def normality_spotcheck(pot: Potential, probe=None, n_points: int = 12,
                        grad_threshold: float = 10.0) -> SpotcheckReport:
    """Sample ``|grad U|`` and ``||hess U|| / |grad U|^zeta`` along a sequence with ``U -> inf``.

    The check fails when, over the last decade of sampled ``U`` values, the
    gradient norm is not increasing past ``grad_threshold`` or the ratio is not
    decreasing.  This is a numerical spot check, not a proof of normality.
    """
    probe = _auto_probe(pot, n_points) if probe is None else np.atleast_2d(np.asarray(probe, float))
    if probe.shape[-1] != pot.n:
        probe = probe.reshape(-1, pot.n)
    U = pot.value(probe)
    g = np.linalg.norm(pot.grad(probe), axis=-1)
    H = pot.hess(probe)
    hn = np.linalg.norm(H, ord=2, axis=(-2, -1))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = hn / g ** pot.zeta
    order = np.argsort(U)
    U, g, ratio = U[order], g[order], ratio[order]
    if not np.all(np.isfinite(U)):
        return SpotcheckReport(U, g, ratio, pot.zeta, False, "probe left the domain")
    logU = np.log10(np.maximum(U, 1e-300))
    tail = np.nonzero(logU >= logU[-1] - 1.0)[0]
    if tail.size < 2:
        tail = np.arange(max(U.size - 2, 0), U.size)
    gt, rt = g[tail], ratio[tail]
    problems = []
    if not (np.all(np.diff(gt) > 0) and gt[-1] > grad_threshold):
        problems.append("|grad U| is not increasing past the threshold")
    if not (np.all(np.diff(rt) <= 1e-12 * np.abs(rt[:-1])) and rt[-1] < rt[0]):
        problems.append("|hess U|/|grad U|^zeta is not decreasing")
    passed = not problems
    return SpotcheckReport(U, g, ratio, pot.zeta, passed, "PASS" if passed else "FAIL: " + "; ".join(problems))
