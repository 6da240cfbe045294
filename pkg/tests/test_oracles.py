"""Re-derive the frozen oracles with mpmath (independent of the package)."""

import mpmath as mp
import pytest

from oracles import ALPHA2, BETA_STAR, D_MAX, DAWSON_1, F_UNIT, Z_STAR

mp.mp.dps = 40


def _dawson(z):
    return mp.exp(-z * z) * mp.quad(lambda t: mp.exp(t * t), [0, z])


def test_dawson_1():
    assert abs(float(_dawson(mp.mpf(1))) - DAWSON_1) < 1e-17


def test_maximum():
    z = mp.findroot(lambda z: 1 - 2 * z * _dawson(z), 0.92)
    assert abs(float(z) - Z_STAR) < 1e-16
    assert abs(float(_dawson(z)) - D_MAX) < 1e-17
    assert abs(1 / (8 * float(_dawson(z)) ** 2) - BETA_STAR) < 1e-14
    assert abs(1 / (4 * float(_dawson(z)) ** 2) - ALPHA2) < 1e-14


def _dawson_erfi(z):
    return mp.sqrt(mp.pi) / 2 * mp.exp(-z * z) * mp.erfi(z)


@pytest.mark.parametrize("z", [1.0, 3.0, 50.0, 100.0])
def test_f_unit(z):
    val = mp.quad(_dawson_erfi, mp.linspace(0, z, int(z) + 2))
    assert abs(float(val) - F_UNIT[z]) < 1e-15
