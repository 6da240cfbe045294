import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nhb.errors import ContractError, PotentialError
from nhb.model import (PotentialSpec, State, SystemParams, hamiltonian, kinetic_energy, make_potential,
                       normality_spotcheck)

SPECS = [
    {"kind": "harmonic", "N": 1, "k": 2, "c": 0.7},
    {"kind": "double_well", "N": 2, "k": 1},
    {"kind": "polynomial", "coefficients": [0.0, 1.0, -2.0, 0.5, 0.3]},
    {"kind": "lennard_jones", "N": 3, "k": 2},
]


def test_params_contracts():
    p = SystemParams(N=2, k=3, m=(1.0, 2.0))
    assert p.n == 6 and p.mass_vector.tolist() == [1, 1, 1, 2, 2, 2]
    assert abs(p.K1 - 1.5) < 1e-15
    for bad in [dict(m=(1.0, 2.0)), dict(m=(0.0,)), dict(gamma=0.0), dict(T=-1.0), dict(a=np.inf), dict(N=0)]:
        with pytest.raises(ContractError):
            SystemParams(**bad)


def test_state_contracts():
    x = State([1.0, 2.0], [0.0, 0.0], 0.5)
    assert x.batch_shape == ()
    with pytest.raises(ContractError):
        State([1.0, 2.0], [0.0], 0.0)
    with pytest.raises(ContractError):
        State(np.zeros((3, 2)), np.zeros((3, 2)), 0.0)
    with pytest.raises(ContractError):
        State([np.nan], [0.0], 0.0)
    b = State.repeat(x, 4)
    assert len(b) == 4 and np.array_equal(b[2].q, x.q)
    assert len(State.stack([x, x])) == 2


def test_hamiltonian_parts(params, double_well):
    x = State([1.5], [2.0], 0.3)
    H = hamiltonian(x, double_well, params)
    assert abs(H - (0.5 * 4 + double_well.value(np.array([1.5])) + 0.5 * 0.09)) < 1e-14
    p2 = SystemParams(N=2, k=1, m=(1.0, 4.0))
    assert abs(kinetic_energy(np.array([1.0, 2.0]), p2) - 1.0) < 1e-15
    with pytest.raises(ContractError):
        kinetic_energy(np.array([1.0, 2.0, 3.0]), p2)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s["kind"])
def test_derivatives_match_finite_differences(spec, rng):
    pot = make_potential(spec)
    n = pot.n
    q = pot.anchor + rng.normal(scale=0.15 if spec["kind"] == "lennard_jones" else 2.0, size=(1000, n))
    # near collisions round-off in U swamps any difference stencil
    q = q[pot.in_domain(q)]
    q = q[pot.value(q) < 1e3]
    h = 1e-4
    g, H = pot.grad(q), pot.hess(q)
    assert np.allclose(H, np.swapaxes(H, -1, -2), rtol=1e-12, atol=1e-12)
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        # fourth-order central stencil
        fd_g = (8 * (pot.value(q + e) - pot.value(q - e)) - pot.value(q + 2 * e) + pot.value(q - 2 * e)) / (12 * h)
        fd_H = (8 * (pot.grad(q + e) - pot.grad(q - e)) - pot.grad(q + 2 * e) + pot.grad(q - 2 * e)) / (12 * h)
        scale = 1 + np.abs(g[:, j])
        assert np.max(np.abs(fd_g - g[:, j]) / scale) < 1e-6
        hscale = 1 + np.max(np.abs(H), axis=(-2, -1))[:, None]
        assert np.max(np.abs(fd_H - H[:, :, j]) / hscale) < 1e-6


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s["kind"])
def test_nonnegative_and_spec_round_trip(spec, rng):
    pot = make_potential(spec)
    q = pot.anchor + rng.normal(scale=3.0, size=(2000, pot.n))
    u = pot.value(q)
    assert np.all(u >= -1e-12)
    back = PotentialSpec.from_dict(pot.spec.to_dict())
    assert back == pot.spec


def test_lennard_jones_domain_and_symmetry(rng):
    pot = make_potential({"kind": "lennard_jones", "N": 3, "k": 2})
    q = pot.anchor + rng.normal(scale=0.1, size=(200, 6))
    perm = q.reshape(-1, 3, 2)[:, [2, 0, 1]].reshape(-1, 6)
    assert np.allclose(pot.value(q), pot.value(perm), rtol=1e-12)
    collide = pot.anchor.copy()
    collide[2:4] = collide[0:2]
    assert not pot.in_domain(collide)
    assert pot.value(collide) == np.inf


def test_rejections():
    with pytest.raises(PotentialError, match="odd"):
        make_potential({"kind": "polynomial", "coefficients": [0, 0, 1, 1]})
    with pytest.raises(PotentialError):
        make_potential({"kind": "polynomial", "coefficients": [0, 0, -1]})
    with pytest.raises(PotentialError):
        make_potential({"kind": "harmonic", "c": -1})
    with pytest.raises(PotentialError, match="unknown"):
        make_potential({"kind": "harmonic", "c1": 1})
    with pytest.raises(PotentialError):
        make_potential({"kind": "morse"})
    with pytest.raises(PotentialError):
        make_potential({"kind": "double_well", "c3": 0.0})
    with pytest.raises(PotentialError):
        make_potential({"kind": "harmonic", "zeta": 2.5})


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s["kind"])
def test_normality_spotcheck_builtins(spec):
    assert normality_spotcheck(make_potential(spec)).passed


def test_normality_spotcheck_flags_flat_gradient():
    # U = sqrt(1 + q^2) has bounded gradient, so it is not normal
    from nhb.model import Potential
    pot = Potential("soft", 1, lambda q: np.sqrt(1 + q[..., 0] ** 2),
                    lambda q: q / np.sqrt(1 + q ** 2),
                    lambda q: (1 + q ** 2)[..., None] ** -1.5, zeta=1.5)
    rep = normality_spotcheck(pot)
    assert not rep.passed and "grad" in rep.message


@settings(max_examples=50)
@given(st.floats(-50, 50), st.floats(-50, 50))
def test_double_well_minimum_is_zero(a, b):
    pot = make_potential({"kind": "double_well", "N": 2}, check=False)
    assert pot.value(np.array([a, b])) >= 0
    assert abs(pot.value(np.array([1.0, -1.0]))) < 1e-14
