"""Run configuration: JSON with a schema version; unknown keys are errors.

Schema (version 1), every section optional except ``schema_version``::

    {
      "schema_version": 1,
      "seed": 0,
      "chains": 1,
      "output_dir": "out",
      "potential":   {"kind": "double_well", "N": 1, "k": 1, "c1": 0.25, "c2": 0.5},
      "system":      {"N": 1, "k": 1, "m": [1.0], "gamma": 1.0, "kB": 1.0, "T": 1.0, "a": 1.0},
      "integrator":  {"scheme": "splitting", "dt": 0.001, "n_steps": 1000,
                      "boundary_policy": "halve_dt", "thinning": 1},
      "initial_state": {"q": [0.0], "p": [0.0], "xi": 0.0},
      "lyapunov":    {"alpha": 1.0, "beta0": 0.2, "eps0": 0.06, "seeds": [32, 4096, 32],
                      "n_samples": 100000, "n_explore": 60000, "explore_hi": 1e10, "max_rounds": 20},
      "diagnostics": {"burn_in_fraction": 0.1, "stationarity": true, "histogram_bins": 60},
      "control":     {"t": 1.0, "origin": {"q": [0.2], "p": [0.5], "xi": 0.1},
                      "targets": [{"q": [0.8], "p": [-0.3], "xi": "boundary"}]}
    }

``lyapunov.beta0`` may be ``"auto"`` (half of ``beta*``, with ``eps0 = 0.3 beta0``).
A control target's ``xi`` is a number, ``"boundary"`` (the least reachable
value) or ``{"above_boundary": c}``.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, PotentialError
from .model import PotentialSpec, State, SystemParams, make_potential
from .specfun import beta_star

__all__ = ["SCHEMA_VERSION", "DEFAULTS", "RunConfig", "load_config", "canonical_json"]

SCHEMA_VERSION = 1

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "chains": 1,
    "output_dir": "out",
    "potential": {"kind": "harmonic", "N": 1, "k": 1},
    "system": {"N": 1, "k": 1, "m": [1.0], "gamma": 1.0, "kB": 1.0, "T": 1.0, "a": 1.0},
    "integrator": {"scheme": "splitting", "dt": 1e-3, "n_steps": 1000, "boundary_policy": "halve_dt",
                   "thinning": 1},
    "initial_state": None,
    "lyapunov": {"alpha": 1.0, "beta0": 0.2, "eps0": 0.06, "seeds": [32.0, 4096.0, 32.0], "n_samples": 100000,
                 "n_explore": 60000, "explore_hi": 1e10, "max_rounds": 20},
    "diagnostics": {"burn_in_fraction": 0.1, "stationarity": True, "histogram_bins": 60},
    "control": {"t": 1.0, "origin": None, "targets": []},
}

_SECTIONS = {"system", "integrator", "lyapunov", "diagnostics", "control"}
_STATE_KEYS = {"q", "p", "xi"}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _merge(user: dict) -> dict:
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    if "schema_version" not in user:
        raise ConfigError("config is missing schema_version")
    if user["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {user['schema_version']!r} (expected {SCHEMA_VERSION})")
    unknown = set(user) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    out = copy.deepcopy(DEFAULTS)
    for key, val in user.items():
        if key in _SECTIONS:
            if not isinstance(val, dict):
                raise ConfigError(f"section {key!r} must be an object")
            bad = set(val) - set(DEFAULTS[key])
            if bad:
                raise ConfigError(f"unknown keys in {key!r}: {sorted(bad)}")
            out[key].update(val)
        else:
            out[key] = val
    return out


def _state(d, n: int, what: str) -> State:
    if not isinstance(d, dict) or set(d) - _STATE_KEYS:
        raise ConfigError(f"{what} must be an object with keys q, p, xi")
    try:
        q = np.asarray(d.get("q", [0.0] * n), float)
        p = np.asarray(d.get("p", [0.0] * n), float)
        return State(q, p, np.asarray(float(d.get("xi", 0.0))))
    except (TypeError, ValueError, ContractError) as exc:
        raise ConfigError(f"{what}: {exc}") from exc


@dataclass
class RunConfig:
    """Validated configuration with built objects."""

    raw: dict
    params: SystemParams
    pot: object
    seed: int
    chains: int

    @property
    def hash(self) -> str:
        return hashlib.sha256(canonical_json(self.raw).encode()).hexdigest()

    @property
    def output_dir(self) -> str:
        return self.raw["output_dir"]

    def integrator(self):
        from .dynamics import IntegratorConfig
        d = dict(self.raw["integrator"])
        d.pop("thinning")
        return IntegratorConfig(seed=self.seed, **d)

    @property
    def thinning(self) -> int:
        return int(self.raw["integrator"]["thinning"])

    def initial_state(self) -> State:
        d = self.raw["initial_state"]
        n = self.params.n
        if d is None:
            return State(np.asarray(self.pot.anchor, float).copy(), np.zeros(n), np.asarray(0.0))
        return _state(d, n, "initial_state")

    def lyapunov_inputs(self) -> tuple:
        """``(alpha, beta0, eps0)`` with ``"auto"`` resolved."""
        ly = self.raw["lyapunov"]
        b0 = ly["beta0"]
        if b0 == "auto":
            b0 = 0.5 * beta_star(self.params)
            e0 = 0.3 * b0 if ly["eps0"] == "auto" else float(ly["eps0"])
        else:
            b0 = float(b0)
            e0 = float(ly["eps0"])
        return float(ly["alpha"]), b0, e0

    def control_origin(self) -> State:
        c = self.raw["control"]
        return self.initial_state() if c["origin"] is None else _state(c["origin"], self.params.n, "control.origin")

    def validate_lyapunov(self) -> None:
        """Cross-field checks of the drift inputs (``0 < beta0 < beta*``, ``eps0``, ``xi*`` floor)."""
        from .lyapunov import select_params
        ly = self.raw["lyapunov"]
        try:
            alpha, b0, e0 = self.lyapunov_inputs()
            seeds = [float(v) for v in ly["seeds"]]
            if len(seeds) != 3:
                raise ConfigError("lyapunov.seeds must hold [p_star, U_star, xi_star]")
            select_params(alpha, b0, e0, self.pot, self.params, *seeds)
        except ContractError as exc:
            bs = beta_star(self.params)
            raise ConfigError(f"lyapunov: {exc} (beta* = {bs:.6f})") from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"lyapunov: {exc}") from exc


def load_config(source, overrides: dict | None = None) -> RunConfig:
    """Parse, merge with defaults and validate a configuration.

    ``source`` is a path, a JSON string or a dict.  ``overrides`` replaces
    top-level keys (``seed``, ``chains``, ``output_dir``) after parsing.
    """
    if isinstance(source, dict):
        user = copy.deepcopy(source)
    else:
        text = source
        if not str(source).lstrip().startswith("{"):
            try:
                with open(source) as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from exc
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    raw = _merge(user)
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    try:
        s = raw["system"]
        params = SystemParams(N=int(s["N"]), k=int(s["k"]), m=tuple(s["m"]), gamma=float(s["gamma"]),
                              kB=float(s["kB"]), T=float(s["T"]), a=float(s["a"]))
    except (ContractError, TypeError, ValueError) as exc:
        raise ConfigError(f"system: {exc}") from exc
    try:
        spec = PotentialSpec.from_dict(raw["potential"])
    except (PotentialError, TypeError, ValueError) as exc:
        raise ConfigError(f"potential: {exc}") from exc
    if (spec.N, spec.k) != (params.N, params.k):
        raise ConfigError(f"potential has N={spec.N}, k={spec.k} but system has N={params.N}, k={params.k}")
    try:
        pot = make_potential(spec, beta=params.beta)
    except (PotentialError, ContractError) as exc:
        raise ConfigError(f"potential: {exc}") from exc
    try:
        seed = int(raw["seed"])
        chains = int(raw["chains"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"seed/chains: {exc}") from exc
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if chains < 1:
        raise ConfigError("chains must be >= 1")
    cfg = RunConfig(raw=raw, params=params, pot=pot, seed=seed, chains=chains)
    it = raw["integrator"]
    try:
        if not float(it["dt"]) > 0:
            raise ConfigError(f"integrator.dt must be positive, got {it['dt']}")
        if int(it["thinning"]) < 1:
            raise ConfigError("integrator.thinning must be >= 1")
        cfg.integrator()
    except ContractError as exc:
        raise ConfigError(f"integrator: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"integrator: {exc}") from exc
    x0 = cfg.initial_state()
    if x0.q.shape != (params.n,) or not bool(pot.in_domain(x0.q)):
        raise ConfigError("initial_state must have N*k coordinates and lie in the domain")
    d = raw["diagnostics"]
    if not 0 <= float(d["burn_in_fraction"]) < 1:
        raise ConfigError("diagnostics.burn_in_fraction must lie in [0, 1)")
    cfg.validate_lyapunov()
    return cfg
