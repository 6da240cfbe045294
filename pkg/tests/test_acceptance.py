"""Acceptance criteria 1-10.

Each test records one ``criterion N: PASS|FAIL ...`` line, prints it and
asserts at the stated tolerance; the lines are repeated in the terminal
summary.  Expensive runs are module fixtures shared between criteria, and
every simulated trajectory is registered for the pathwise checks of
criterion 7.
"""

import numpy as np
import pytest

import conftest
from nhb.certify import escalate
from nhb.control import build_control_path, min_xi, verify_control
from nhb.diagnostics import GibbsModel, ks_distance, lyapunov_contraction_check, temperature_estimate, tv_decay
from nhb.dynamics import IntegratorConfig, simulate, support_bound_violations, xi_identity_error
from nhb.errors import InfeasibleTargetError
from nhb.lyapunov import V_and_W, drift_ratio, generator_apply, generator_H, generator_split, select_params
from nhb.model import State, SystemParams, hamiltonian, make_potential
from nhb.specfun import beta_star, dawson
from oracles import DAWSON_1

DW_SPEC = {"kind": "double_well", "c1": 0.25, "c2": 0.5}
PARAMS = SystemParams()  # kB T = gamma = a = m = 1

# trajectories produced by the acceptance runs, checked by criterion 7
TRAJECTORIES = {}


def _record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _random_states(seed: int, m: int = 1000) -> State:
    rng = np.random.default_rng(seed)
    return State(rng.normal(scale=2.0, size=(m, 1)), rng.normal(scale=2.0, size=(m, 1)),
                 rng.normal(scale=3.0, size=m))


def _pots():
    return {"harmonic": make_potential({"kind": "harmonic"}), "double_well": make_potential(DW_SPEC)}


# ---------------------------------------------------------------------------
# shared runs

@pytest.fixture(scope="module")
def certified():
    """Escalated scales and certificate for the double well, alpha=1, beta0=0.2, eps0=0.06."""
    pot = make_potential(DW_SPEC)
    lp, rep = escalate(pot, PARAMS, 1.0, 0.2, 0.06, n_samples=100000, seed=0)
    return pot, lp, rep


@pytest.fixture(scope="module")
def sampling_run():
    """50000 chains from (0, 0, 0): 5000 burn-in steps, then 100 recorded steps each."""
    pot = make_potential(DW_SPEC)
    C = 50000
    x0 = State(np.zeros((C, 1)), np.zeros((C, 1)), np.zeros(C))
    n_burn = 5000
    burn = simulate(x0, IntegratorConfig(dt=2e-3, n_steps=n_burn, seed=7), pot, PARAMS, thinning=n_burn)
    post = simulate(burn.final_state(), IntegratorConfig(dt=2e-3, n_steps=100, seed=7), pot, PARAMS,
                    first_step=n_burn)
    TRAJECTORIES["6: burn-in"] = burn
    TRAJECTORIES["6: sampling"] = post
    return pot, burn, post


@pytest.fixture(scope="module")
def contraction_run(certified):
    pot, lp, _ = certified
    C = 10000
    x = State([1.0], [0.5], 0.3)
    tr = simulate(State.repeat(x, C), IntegratorConfig(dt=2e-3, n_steps=1000, seed=5), pot, PARAMS, thinning=250)
    TRAJECTORIES["9: contraction"] = tr
    return x, tr


@pytest.fixture(scope="module")
def tv_runs():
    pot = make_potential({"kind": "harmonic"})
    C = 10000
    cfg = IntegratorConfig(dt=1e-2, n_steps=1500, seed=11)
    runs = []
    for q0, ids in ((-3.0, np.arange(C)), (3.0, np.arange(C, 2 * C))):
        x0 = State(np.full((C, 1), q0), np.zeros((C, 1)), np.zeros(C))
        runs.append(simulate(x0, cfg, pot, PARAMS, thinning=5, chain_ids=ids))
    TRAJECTORIES["10: from q=-3"], TRAJECTORIES["10: from q=+3"] = runs
    return runs


# ---------------------------------------------------------------------------
# criteria

def test_criterion_1_beta_star():
    b = beta_star(PARAMS)
    _record(1, abs(b - 0.427015) <= 1e-4, f"beta* = {b:.12f} (target 0.427015 +- 1e-4)")


def test_criterion_2_dawson():
    z = np.linspace(-10.0, 10.0, 201)
    h = 1e-2
    # eighth-order central difference of the implementation itself
    weights = ((1, 4 / 5), (2, -1 / 5), (3, 4 / 105), (4, -1 / 280))
    dD = sum(w * (dawson(z + k * h) - dawson(z - k * h)) for k, w in weights) / h
    ode = float(np.max(np.abs(dD - (1.0 - 2.0 * z * dawson(z)))))
    lim = abs(2.0 * 100.0 * float(dawson(100.0)) - 1.0)
    d1 = abs(float(dawson(1.0)) - DAWSON_1)
    ok = ode < 1e-8 and lim < 1e-3 and d1 < 1e-10
    _record(2, ok, f"ODE residual {ode:.2e} (< 1e-8), |2zD-1| at z=100 {lim:.2e} (< 1e-3), "
                   f"|D(1) - oracle| {d1:.2e} (< 1e-10)")


def test_criterion_3_generator_identity():
    parts = []
    ok = True
    for name, pot in _pots().items():
        x = _random_states(3 if name == "harmonic" else 4)
        H = lambda s, pot=pot: hamiltonian(s, pot, PARAMS)
        full = generator_apply(H, x, pot, PARAMS)
        ref = generator_H(x, PARAMS)
        rel = float(np.max(np.abs(full - ref) / np.abs(ref)))
        split = float(np.max(np.abs(sum(generator_split(H, x, pot, PARAMS)) - full)))
        ok &= rel < 1e-6 and split < 1e-10
        parts.append(f"{name}: max rel err {rel:.2e}, split-sum err {split:.2e}")
    _record(3, ok, "; ".join(parts) + " (1000 states each; < 1e-6, < 1e-10)")


def test_criterion_4_exponential_identity(certified):
    parts = []
    ok = True
    _, lp_cert, _ = certified
    for name, pot in _pots().items():
        x = _random_states(5 if name == "harmonic" else 6)
        # small cutoff scales put every psi term in play at these states;
        # the certified scales are checked as well
        lps = {"small scales": select_params(1.0, 0.2, 0.06, pot, PARAMS, p_star=2.0, U_star=2.0, xi_star=4.5)}
        if name == "double_well":
            lps["certified scales"] = lp_cert
        for tag, lp in lps.items():
            W = lambda s, pot=pot, lp=lp: V_and_W(s, pot, lp, PARAMS)[1]
            ratio = generator_apply(W, x, pot, PARAMS, h=0.02) / W(x)
            d = drift_ratio(x, pot, lp, PARAMS)
            rel = float(np.max(np.abs(ratio - d) / np.abs(d)))
            ok &= rel < 1e-5
            parts.append(f"{name} ({tag}): max rel err {rel:.2e}")
    _record(4, ok, "; ".join(parts) + " (1000 states each; < 1e-5)")


def test_criterion_5_drift_certification(certified):
    _, lp, rep = certified
    ok = (rep.passed and rep.n_violations == 0 and rep.n_sandwich_violations == 0 and rep.n_outside >= 100000)
    _record(5, ok, f"{rep.n_outside} shell samples in H in [{rep.shell[0]:.6g}, {rep.shell[1]:.6g}]: "
                   f"{rep.n_violations} drift / {rep.n_sandwich_violations} sandwich violations; "
                   f"max drift {rep.max_drift_outside:.4f} (<= -1); escalated p*={lp.p_star:g}, U*={lp.U_star:g}, "
                   f"xi*={lp.xi_star:g} after {len(rep.rounds)} rounds; log K = {rep.logK:.6g}")


def test_criterion_6_sampling(sampling_run):
    pot, _, post = sampling_run
    rec = post.after(post.times[1])  # the continuation's first state is the burn-in end
    n_steps = rec.q.shape[0] * rec.q.shape[1]
    model = GibbsModel(pot, PARAMS)
    ks = ks_distance(rec.q[..., 0].ravel(), model.q_marginal_cdf())
    T = temperature_estimate(rec, PARAMS)
    xi = rec.xi.ravel()
    ok = (n_steps >= 5_000_000 and ks < 0.01 and abs(T - 1.0) < 0.02 and abs(xi.mean()) < 0.02
          and abs(xi.var() - 1.0) < 0.05)
    _record(6, ok, f"{n_steps} post-burn-in states: KS {ks:.4f} (< 0.01), T {T:.4f} (+-0.02), "
                   f"mean xi {xi.mean():+.4f} (+-0.02), Var xi {xi.var():.4f} (+-0.05)")


def test_criterion_8_control():
    pot = make_potential({"kind": "harmonic"})
    x = State([0.2], [0.5], 0.1)
    q2, p2 = [0.8], [-0.3]
    mx = min_xi(x, 1.0, q2, PARAMS, pot)
    parts = []
    ok = True
    for label, excess in (("boundary", 0.0), ("interior", 0.3), ("dwell", 5.0)):
        path = build_control_path(x, 1.0, State(q2, p2, mx + excess), pot, PARAMS)
        rep = verify_control(path, x, pot, PARAMS)
        worst = float(max(rep.error_q.max(), rep.error_p.max(), rep.error_xi))
        ok &= worst < 1e-6
        parts.append(f"{label} ({path.mode}) err {worst:.1e}")
    try:
        build_control_path(x, 1.0, State(q2, p2, mx - 1e-3), pot, PARAMS)
        rejected = False
    except InfeasibleTargetError:
        rejected = True
    ok &= rejected
    _record(8, ok, "; ".join(parts) + f" (< 1e-6); infeasible target rejected: {rejected}")


def test_criterion_9_contraction(certified, contraction_run):
    pot, lp, rep = certified
    x, tr = contraction_run
    logW0 = V_and_W(x, pot, lp, PARAMS)[0]
    parts = []
    ok = True
    for t in (0.5, 1.0, 2.0):
        k = int(np.argmin(np.abs(tr.times - t)))
        assert abs(tr.times[k] - t) < 1e-9
        logw = V_and_W(State(tr.q[k], tr.p[k], tr.xi[k]), pot, lp, PARAMS)[0]
        chk = lyapunov_contraction_check(logw, logW0, lp.alpha, rep.logK, t)
        ok &= chk.passed
        # the ratio against e^{-alpha t} W(x) alone shows how much of the slack K supplies
        parts.append(f"t={t:g}: log E W {chk.log_mean:.4f} <= log bound {chk.log_bound:.6g} "
                     f"(log E W - (log W(x) - alpha t) = {chk.log_mean - (logW0 - lp.alpha * t):+.4f})")
    _record(9, ok, f"10000 chains from W(x) = exp({logW0:.4f}); " + "; ".join(parts))


def test_criterion_10_tv_decay(tv_runs):
    a, b = tv_runs
    tv = tv_decay(a, b)
    run_min = np.minimum.accumulate(tv.tv)
    monotone = bool(np.all(tv.tv <= run_min + tv.floor))
    n_fit = tv.window[1] - tv.window[0]
    ok = monotone and tv.monotone() and tv.r2 > 0.9
    _record(10, ok, f"TV monotone up to the noise floor: {monotone}; fit on {n_fit} snapshots "
                    f"(t in [{tv.times[tv.window[0]]:.2f}, {tv.times[tv.window[1] - 1]:.2f}]): "
                    f"rate {tv.rate:.4f}, R^2 {tv.r2:.4f} (> 0.9)")


def test_criterion_7_pathwise_bounds(sampling_run, contraction_run, tv_runs):
    # runs last: every acceptance trajectory has been registered by the fixtures
    parts = []
    ok = True
    for name, tr in TRAJECTORIES.items():
        err = xi_identity_error(tr, PARAMS)
        viol = support_bound_violations(tr, PARAMS)
        ok &= err < 1e-9 and viol == 0 and not tr.errors
        parts.append(f"[{name}] xi identity {err:.1e}, CS violations {viol}")
    ok &= len(TRAJECTORIES) == 5
    _record(7, ok, f"{len(TRAJECTORIES)} trajectories: " + "; ".join(parts) + " (< 1e-9, 0)")
