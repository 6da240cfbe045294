"""Lyapunov function ``W = exp(beta0 H + psi0 + psi1 + psi2)`` and the generator.

Derivatives of ``V = log W`` are carried analytically in forward mode by
:class:`Jet`, which tracks the value, the first derivatives in ``q``, ``p`` and
``xi``, and the Laplacian in ``p``.  That is exactly the information the
generator consumes.  :func:`generator_apply` also accepts a plain callable and
then differentiates it by Richardson-extrapolated central differences, which
gives an independent evaluation path.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ContractError, StencilError
from .model import State, SystemParams, hamiltonian
from .specfun import F_unit, beta_star, dawson, dawson_max

__all__ = [
    "LyapunovParams", "CutoffSet", "Jet", "smooth_step", "select_params",
    "hamiltonian_jet", "psi0_jet", "psi1_jet", "psi2_jet", "V_jet",
    "psi0", "psi1", "psi2", "V_and_W", "generator_apply", "generator_split",
    "drift_ratio", "generator_H", "region_labels",
]


# ---------------------------------------------------------------------------
# cutoffs

_T_EDGE = 1e-3  # s and its derivatives are below exp(-900) outside [_T_EDGE, 1 - _T_EDGE]


def smooth_step(t):
    """Smooth step ``s(t) = sigma(t) / (sigma(t) + sigma(1-t))``, ``sigma(t) = exp(-1/t)``.

    Returns ``(s, s', s'')``; ``s = 0`` for ``t <= 0`` and ``s = 1`` for ``t >= 1``.
    """
    t = np.asarray(t, dtype=float)
    inner = (t > _T_EDGE) & (t < 1.0 - _T_EDGE)
    tc = np.clip(t, _T_EDGE, 1.0 - _T_EDGE)
    u = 1.0 - tc
    s = special.expit(1.0 / u - 1.0 / tc)
    w = 1.0 / tc ** 2 + 1.0 / u ** 2
    ds = s * (1.0 - s) * w
    d2s = ds * (1.0 - 2.0 * s) * w + s * (1.0 - s) * (-2.0 / tc ** 3 + 2.0 / u ** 3)
    s = np.where(inner, s, np.where(t >= 0.5, 1.0, 0.0))
    ds = np.where(inner, ds, 0.0)
    d2s = np.where(inner, d2s, 0.0)
    return s, ds, d2s


def _down(y, shift):
    """``1 - s(y - shift)``: 1 below ``shift``, 0 above ``shift + 1``."""
    s, ds, d2s = smooth_step(np.asarray(y, dtype=float) - shift)
    return 1.0 - s, -ds, -d2s


def _abs_down(y, lo):
    """``1 - s(|y| - lo)``."""
    y = np.asarray(y, dtype=float)
    s, ds, d2s = smooth_step(np.abs(y) - lo)
    sg = np.sign(y)
    return 1.0 - s, -ds * sg, -d2s


class CutoffSet:
    """The cutoffs ``f0..f3`` and ``h1..h3``; each returns ``(value, d/dy, d2/dy2)``."""

    def __init__(self, K_star: float, xi_star: float):
        self.K_star = float(K_star)
        self.xi_star = float(xi_star)

    def f0(self, y):
        return _down(y, -1.0)

    def f1(self, y):
        return _down(y, self.K_star)

    def f2(self, y):
        return _abs_down(y, 1.0)

    def f3(self, y):
        v, d, dd = _abs_down(y, 1.0)
        return 1.0 - v, -d, -dd

    def h1(self, y):
        return _down(y, -self.xi_star - 1.0)

    def h2(self, y):
        return self.f2(y)

    def h3(self, y):
        return _abs_down(y, 3.0)


# ---------------------------------------------------------------------------
# forward-mode jets

class Jet:
    """Value, gradients in ``q``, ``p``, ``xi`` and the ``p``-Laplacian of a scalar field."""

    __slots__ = ("val", "dq", "dp", "dxi", "lap")

    def __init__(self, val, dq, dp, dxi, lap):
        self.val = val
        self.dq = dq
        self.dp = dp
        self.dxi = dxi
        self.lap = lap

    @classmethod
    def const(cls, c, shape, n):
        z = np.zeros(shape)
        return cls(np.full(shape, float(c)) if np.ndim(c) == 0 else np.asarray(c, float),
                   np.zeros(shape + (n,)), np.zeros(shape + (n,)), z, z.copy())

    @classmethod
    def xi(cls, x: State):
        shape, n = x.xi.shape, x.q.shape[-1]
        return cls(x.xi.copy(), np.zeros(shape + (n,)), np.zeros(shape + (n,)),
                   np.ones(shape), np.zeros(shape))

    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self.val + other.val, self.dq + other.dq, self.dp + other.dp,
                       self.dxi + other.dxi, self.lap + other.lap)
        return Jet(self.val + other, self.dq, self.dp, self.dxi, self.lap)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.val, -self.dq, -self.dp, -self.dxi, -self.lap)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, Jet):
            a, b = self, other
            cross = 2.0 * np.sum(a.dp * b.dp, axis=-1)
            return Jet(a.val * b.val,
                       a.dq * b.val[..., None] + b.dq * a.val[..., None],
                       a.dp * b.val[..., None] + b.dp * a.val[..., None],
                       a.dxi * b.val + b.dxi * a.val,
                       a.lap * b.val + b.lap * a.val + cross)
        c = np.asarray(other, dtype=float)
        return Jet(self.val * c, self.dq * c[..., None], self.dp * c[..., None],
                   self.dxi * c, self.lap * c)

    __rmul__ = __mul__

    def compose(self, f, df, d2f):
        """Chain rule for ``g(self)`` given ``g``, ``g'`` and ``g''`` evaluated at ``self.val``."""
        df = np.asarray(df, dtype=float)
        d2f = np.asarray(d2f, dtype=float)
        gp2 = np.sum(self.dp * self.dp, axis=-1)
        return Jet(np.asarray(f, float), self.dq * df[..., None], self.dp * df[..., None],
                   self.dxi * df, self.lap * df + d2f * gp2)

    def apply(self, fn):
        """Compose with a cutoff-style map returning ``(value, d1, d2)``."""
        return self.compose(*fn(self.val))

    def reciprocal(self):
        v = self.val
        return self.compose(1.0 / v, -1.0 / v ** 2, 2.0 / v ** 3)

    def sqrt(self):
        r = np.sqrt(self.val)
        return self.compose(r, 0.5 / r, -0.25 / (r * self.val))

    def where(self, mask, other: "Jet"):
        m = np.asarray(mask)
        return Jet(np.where(m, self.val, other.val), np.where(m[..., None], self.dq, other.dq),
                   np.where(m[..., None], self.dp, other.dp), np.where(m, self.dxi, other.dxi),
                   np.where(m, self.lap, other.lap))


# ---------------------------------------------------------------------------
# parameters

@dataclass(frozen=True)
class LyapunovParams:
    """Parameters of ``W``.

    ``eps0`` is the sandwich budget ``|psi| <= eps0 H``; ``eps`` is the smaller
    working constant that enters ``alpha1`` and ``K_star``.
    """

    beta0: float
    eps0: float
    delta: float
    alpha: float
    alpha1: float
    alpha2: float
    K_star: float
    p_star: float
    U_star: float
    xi_star: float
    K1: float
    eps: float

    @property
    def cutoffs(self) -> CutoffSet:
        return CutoffSet(self.K_star, self.xi_star)

    def validate(self, params: SystemParams) -> None:
        bs = beta_star(params)
        if not (0.0 < self.beta0 < bs):
            raise ContractError(f"beta0={self.beta0} violates 0 < beta0 < beta* = beta/(8 D_max^2) = {bs:.6f}")
        if not (0.0 < self.eps0 < self.beta0):
            raise ContractError(f"eps0={self.eps0} must lie in (0, beta0={self.beta0})")
        floor = max(3.0 * params.gamma / mi for mi in params.m) + 1.0
        if not self.xi_star > floor:
            raise ContractError(f"xi_star={self.xi_star} must exceed max_j(3 gamma/m_j) + 1 = {floor}")
        dmax = min(self.eps0 / 3.0, bs / 2.0 - self.beta0 / 2.0)
        if self.delta > dmax * (1 + 1e-12):
            raise ContractError(f"delta={self.delta} exceeds min(eps0/3, beta*/2 - beta0/2) = {dmax}")
        if min(self.p_star, self.U_star, self.alpha) <= 0:
            raise ContractError("p_star, U_star and alpha must be positive")

    def replace(self, **kw) -> "LyapunovParams":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def select_params(alpha: float, beta0: float, eps0: float, pot, params: SystemParams,
                  p_star: float = 1.0, U_star: float = 1.0, xi_star: float | None = None) -> LyapunovParams:
    """Choose ``delta, eps, alpha1, alpha2, K_star`` from ``(alpha, beta0, eps0)``.

    The cutoff scales ``p_star``, ``U_star`` and ``xi_star`` are seeds; the
    certification loop grows them.  The working constant is
    ``eps = min(eps0/6, m/2)`` with ``m = min(1/2 - beta0/(2 beta), 1/2, beta* - beta0 - delta)``,
    which keeps it strictly inside the admissible range.
    """
    beta = params.beta
    bs = beta_star(params)
    if not (alpha > 0):
        raise ContractError("alpha must be positive")
    if not (0.0 < beta0 < bs):
        raise ContractError(
            f"beta0={beta0} rejected: need beta0 < beta* = beta/(8 D_max^2) = {bs:.6f} (upper bound on the exponent)")
    if not (0.0 < eps0 < beta0):
        raise ContractError(f"eps0={eps0} must lie in (0, beta0={beta0})")
    kN = params.n
    K1 = params.K1
    delta = min(eps0 / 3.0, bs / 2.0 - beta0 / 2.0)
    upper = min(0.5 - beta0 / (2.0 * beta), 0.5, bs - beta0 - delta)
    eps = min(eps0 / 6.0, 0.5 * upper)
    d_max = dawson_max().d_max
    alpha1 = 2.0 * alpha + 2.0 * (beta0 / beta) * K1 + 2.0 * ((beta0 + delta + eps) / beta) * kN
    alpha2 = 1.0 / (4.0 * d_max ** 2)
    K_star = beta * alpha / (beta0 * kN) + K1 / kN + (beta0 + delta + eps) / beta0
    if xi_star is None:
        xi_star = max(3.0 * params.gamma / mi for mi in params.m) + 2.0
    lp = LyapunovParams(beta0=beta0, eps0=eps0, delta=delta, alpha=alpha, alpha1=alpha1,
                        alpha2=alpha2, K_star=K_star, p_star=float(p_star), U_star=float(U_star),
                        xi_star=float(xi_star), K1=K1, eps=eps)
    lp.validate(params)
    return lp


# ---------------------------------------------------------------------------
# jets of H and of the perturbations

def _as_state(x) -> State:
    if isinstance(x, State):
        return x
    raise ContractError("expected a State")


def hamiltonian_jet(x: State, pot, params: SystemParams) -> Jet:
    mv = params.mass_vector
    shape = x.xi.shape
    val = hamiltonian(x, pot, params)
    return Jet(val, pot.grad(x.q), x.p / mv, params.a * x.xi,
               np.full(shape, float(np.sum(1.0 / mv))))


def psi0_jet(x: State, lp: LyapunovParams, params: SystemParams) -> Jet:
    xi = Jet.xi(x)
    f0 = xi.apply(lp.cutoffs.f0)
    return f0 * (xi * xi) * (0.5 * params.a * lp.delta)


def _grad_jets(x: State, pot):
    """Jets of ``grad U`` components are implicit; return ``g``, ``Hess U``."""
    return pot.grad(x.q), pot.hess(x.q)


def _g2_norm_jet(g, Hs, shape, n) -> Jet:
    z = np.zeros(shape)
    return Jet(np.sum(g * g, axis=-1), 2.0 * np.einsum("...ij,...j->...i", Hs, g),
               np.zeros(shape + (n,)), z, z.copy())


def _p2_jet(x: State) -> Jet:
    shape, n = x.xi.shape, x.q.shape[-1]
    return Jet(np.sum(x.p * x.p, axis=-1), np.zeros(shape + (n,)), 2.0 * x.p, np.zeros(shape),
               np.full(shape, 2.0 * n))


def _xi2p1_jet(x: State) -> Jet:
    xi = Jet.xi(x)
    return xi * xi + 1.0


def psi1_jet(x: State, pot, lp: LyapunovParams, params: SystemParams, _gh=None) -> Jet:
    g, Hs = _gh if _gh is not None else _grad_jets(x, pot)
    shape, n = x.xi.shape, x.q.shape[-1]
    cut = lp.cutoffs
    gn = _g2_norm_jet(g, Hs, shape, n)
    active = gn.val >= 0.5 * lp.U_star
    # g1 vanishes identically wherever |grad U|^2 < U_star/2 (f3 is 0 there), so a
    # clamped denominator leaves the product and its derivatives unchanged
    gn_safe = gn.where(active, Jet.const(0.5 * lp.U_star, shape, n))
    s2 = _xi2p1_jet(x)
    ss = s2.sqrt()
    f1 = Jet.xi(x).apply(cut.f1)
    f2 = (_p2_jet(x) * (ss * lp.p_star).reciprocal()).apply(cut.f2)
    f3 = (gn_safe * (s2 * lp.U_star).reciprocal()).apply(cut.f3)
    pg = Jet(np.sum(x.p * g, axis=-1), np.einsum("...ij,...j->...i", Hs, x.p), g.copy(),
             np.zeros(shape), np.zeros(shape))
    out = f1 * f2 * f3 * ss * pg * gn_safe.reciprocal() * lp.alpha1
    return out.where(active, Jet.const(0.0, shape, n))


def _F_jet(z: Jet, alpha2: float) -> Jet:
    d = dawson(z.val)
    return z.compose(-2.0 * alpha2 * F_unit(z.val), -2.0 * alpha2 * d,
                     -2.0 * alpha2 * (1.0 - 2.0 * z.val * d))


def psi2_jet(x: State, pot, lp: LyapunovParams, params: SystemParams, _gh=None) -> Jet:
    g, Hs = _gh if _gh is not None else _grad_jets(x, pot)
    shape, n = x.xi.shape, x.q.shape[-1]
    cut = lp.cutoffs
    mv = params.mass_vector
    beta, gamma = params.beta, params.gamma
    active = x.xi < -lp.xi_star
    # g2 and all its derivatives vanish for xi >= -xi_star, where each coordinate is
    # also already in the branch xi <= -3 gamma/m_j; evaluate the formula at a safe xi
    xi_safe = np.where(active, x.xi, -lp.xi_star - 1.0)
    xs = State(x.q, x.p, xi_safe)
    xi = Jet.xi(xs)
    s2 = _xi2p1_jet(xs)
    ss = s2.sqrt()
    gn = _g2_norm_jet(g, Hs, shape, n)
    h1 = xi.apply(cut.h1)
    h2 = (_p2_jet(xs) * (ss * lp.p_star).reciprocal()).apply(cut.h2)
    h3 = (gn * (s2 * lp.U_star).reciprocal()).apply(cut.h3)
    g2 = h1 * h2 * h3
    total = Jet.const(0.0, shape, n)
    for j in range(n):
        c = -(xi + gamma / mv[j])  # |xi + gamma/m_j| on the active branch
        gj = Jet(g[..., j], Hs[..., j, :].copy(), np.zeros(shape + (n,)), np.zeros(shape),
                 np.zeros(shape))
        pj = Jet(x.p[..., j].copy(), np.zeros(shape + (n,)), np.zeros(shape + (n,)),
                 np.zeros(shape), np.zeros(shape))
        pj.dp[..., j] = 1.0
        z = (c * (beta / (2.0 * gamma))).sqrt() * (pj - gj * c.reciprocal())
        total = total + _F_jet(z, lp.alpha2)
    out = g2 * total
    return out.where(active, Jet.const(0.0, shape, n))


def V_jet(x: State, pot, lp: LyapunovParams, params: SystemParams) -> Jet:
    x = _as_state(x)
    gh = _grad_jets(x, pot)
    return (hamiltonian_jet(x, pot, params) * lp.beta0 + psi0_jet(x, lp, params)
            + psi1_jet(x, pot, lp, params, gh) + psi2_jet(x, pot, lp, params, gh))


def psi0(x: State, lp: LyapunovParams, params: SystemParams):
    """``delta f0(xi) a xi^2 / 2``."""
    return psi0_jet(_as_state(x), lp, params).val


def psi1(x: State, pot, lp: LyapunovParams, params: SystemParams):
    """``g1 alpha1 sqrt(xi^2+1) p.grad U / |grad U|^2`` where ``|grad U|^2 >= U_star/2``, else 0."""
    return psi1_jet(_as_state(x), pot, lp, params).val


def psi2(x: State, pot, lp: LyapunovParams, params: SystemParams):
    """``g2 sum_j F(z_j)`` on ``xi < -xi_star`` (0 elsewhere), ``F = -2 alpha2 F_unit``."""
    return psi2_jet(_as_state(x), pot, lp, params).val


def V_and_W(x: State, pot, lp: LyapunovParams, params: SystemParams):
    """Return ``(V, W, overflow)`` with ``W = exp(V)``.

    ``overflow`` is True where ``exp(V)`` is not representable; ``W`` is ``inf``
    there and all comparisons should use ``V``.
    """
    x = _as_state(x)
    gh = _grad_jets(x, pot)
    V = (lp.beta0 * hamiltonian(x, pot, params) + psi0(x, lp, params)
         + psi1_jet(x, pot, lp, params, gh).val + psi2_jet(x, pot, lp, params, gh).val)
    overflow = V > np.log(np.finfo(float).max)
    with np.errstate(over="ignore"):
        W = np.exp(V)
    if np.ndim(V) == 0:
        return float(V), float(W), bool(overflow)
    return V, W, overflow


# ---------------------------------------------------------------------------
# generator

def _split_from_jet(j: Jet, x: State, pot, params: SystemParams):
    mv = params.mass_vector
    g = pot.grad(x.q)
    T1 = np.sum(x.p / mv * j.dq, axis=-1)
    A = (-np.sum((x.xi[..., None] + params.gamma / mv) * x.p * j.dp, axis=-1)
         - np.sum(g * j.dp, axis=-1) + params.gamma / params.beta * j.lap)
    kin2 = np.sum(x.p * x.p / mv, axis=-1)
    T2 = (kin2 - params.n / params.beta) / params.a * j.dxi
    return T1, A, T2


def _fd_derivatives(phi, x: State, pot, h: float | None = None, levels: int = 10):
    """Richardson-extrapolated central differences of ``phi``.

    Returns a Jet with value, gradients and the ``p``-Laplacian.  Differences
    are taken at steps ``h_i = h 2^-i``; each triple of consecutive levels is
    extrapolated to sixth order, and per point the estimate from the pair of
    neighbouring extrapolants that agree best is kept.  Large steps suppress
    round-off, small ones resolve narrow cutoff transitions.  With ``levels=3``
    the step is fixed.
    """
    n = x.q.shape[-1]
    shape = x.xi.shape
    f0 = np.asarray(phi(x), dtype=float)
    h = 0.1 if h is None else float(h)
    steps = [h * 2.0 ** -i for i in range(max(levels, 3))]

    def shifted(kind, j, d):
        q, p, xi = x.q, x.p, x.xi
        if kind == "q":
            q = q.copy()
            q[..., j] += d
            if not np.all(pot.in_domain(q)) or not np.all(np.isfinite(pot.value(q))):
                raise StencilError(f"finite-difference stencil leaves the domain (q{j} +/- {abs(d):g})")
        elif kind == "p":
            p = p.copy()
            p[..., j] += d
        else:
            xi = xi + d
        return np.asarray(phi(State(q, p, xi)), dtype=float)

    def extrapolate(vals):
        r1 = [(4.0 * vals[i + 1] - vals[i]) / 3.0 for i in range(len(vals) - 1)]
        r2 = np.array([(16.0 * r1[i + 1] - r1[i]) / 15.0 for i in range(len(r1) - 1)])
        if r2.shape[0] == 1:
            return r2[0]
        gap = np.abs(np.diff(r2, axis=0))
        best = np.argmin(gap, axis=0)
        return np.take_along_axis(r2[1:], best[None], axis=0)[0]

    def first_and_second(kind, j):
        d1, d2 = [], []
        for s in steps:
            fp, fm = shifted(kind, j, s), shifted(kind, j, -s)
            d1.append((fp - fm) / (2.0 * s))
            d2.append((fp - 2.0 * f0 + fm) / (s * s))
        return extrapolate(d1), extrapolate(d2)

    dq = np.zeros(shape + (n,))
    dp = np.zeros(shape + (n,))
    lap = np.zeros(shape)
    for j in range(n):
        dq[..., j] = first_and_second("q", j)[0]
        a, b = first_and_second("p", j)
        dp[..., j] = a
        lap = lap + b
    dxi = first_and_second("xi", 0)[0]
    return Jet(f0, dq, dp, dxi, lap)


def generator_split(phi, x: State, pot, params: SystemParams, h: float | None = None):
    """Return ``(T1 phi, A phi, T2 phi)`` with ``L = T1 + A + T2``.

    ``T1`` is transport in ``q``, ``A`` collects the ``p``-drift and the
    ``p``-Laplacian, ``T2`` is the thermostat term.
    """
    x = _as_state(x)
    j = phi if isinstance(phi, Jet) else _fd_derivatives(phi, x, pot, h)
    return _split_from_jet(j, x, pot, params)


def generator_apply(phi, x: State, pot, params: SystemParams, h: float | None = None):
    """Apply the generator to ``phi`` at ``x``.

    Parameters
    ----------
    phi : Jet or callable
        A :class:`Jet` evaluated at ``x`` (analytic path) or a callable
        ``State -> array`` differentiated by Richardson central differences
        with largest step ``h`` (default 0.1) and adaptive level selection.

    Raises
    ------
    StencilError
        If a difference stencil leaves the potential's domain.
    """
    x = _as_state(x)
    j = phi if isinstance(phi, Jet) else _fd_derivatives(phi, x, pot, h)
    mv = params.mass_vector
    g = pot.grad(x.q)
    kin2 = np.sum(x.p * x.p / mv, axis=-1)
    return (np.sum(x.p / mv * j.dq, axis=-1)
            - np.sum((x.xi[..., None] + params.gamma / mv) * x.p * j.dp, axis=-1)
            - np.sum(g * j.dp, axis=-1)
            + (kin2 - params.n / params.beta) / params.a * j.dxi
            + params.gamma / params.beta * j.lap)


def generator_H(x: State, params: SystemParams):
    """Closed form ``L H = -xi kN/beta - gamma sum p^2/m^2 + (gamma/beta) sum 1/m``."""
    mv = params.mass_vector
    return (-x.xi * params.n / params.beta - params.gamma * np.sum(x.p * x.p / mv ** 2, axis=-1)
            + params.gamma / params.beta * float(np.sum(1.0 / mv)))


def drift_ratio(x: State, pot, lp: LyapunovParams, params: SystemParams):
    """``L V + (gamma/beta) |grad_p V|^2``, which equals ``L W / W``.

    ``L(beta0 H)`` enters through its closed form; the transport terms
    ``p.grad U`` it contains cancel exactly there, which keeps the result
    accurate at large energies.
    """
    x = _as_state(x)
    gh = _grad_jets(x, pot)
    psi = psi0_jet(x, lp, params) + psi1_jet(x, pot, lp, params, gh) + psi2_jet(x, pot, lp, params, gh)
    grad_p = lp.beta0 * x.p / params.mass_vector + psi.dp
    return (lp.beta0 * generator_H(x, params) + generator_apply(psi, x, pot, params)
            + params.gamma / params.beta * np.sum(grad_p * grad_p, axis=-1))


def region_labels(x: State, pot, lp: LyapunovParams, params: SystemParams) -> np.ndarray:
    """Reporting labels: 0 for R0, 1 for the g1-support, 2 for the g2-support, 3 otherwise.

    R0 is ``xi >= K_star`` or ``|p|^2 >= p_star sqrt(xi^2+1)``; the g-supports
    take precedence in the order g2, g1.
    """
    x = _as_state(x)
    g = pot.grad(x.q)
    gn = np.sum(g * g, axis=-1)
    s2 = x.xi ** 2 + 1.0
    p2 = np.sum(x.p * x.p, axis=-1)
    in_p = p2 < 2.0 * lp.p_star * np.sqrt(s2)
    g1 = (x.xi < lp.K_star + 1.0) & in_p & (gn > lp.U_star * s2)
    g2 = (x.xi < -lp.xi_star) & in_p & (gn < 4.0 * lp.U_star * s2)
    r0 = (x.xi >= lp.K_star) | (p2 >= lp.p_star * np.sqrt(s2))
    lab = np.full(x.xi.shape, 3, dtype=int)
    lab[r0] = 0
    lab[g1] = 1
    lab[g2] = 2
    return lab
