"""Trajectory persistence.

CSV (one chain): a first line ``# format: nhb-trajectory/1`` followed by the
header ``t,q0,..,p0,..,xi`` and one row per stored state, numbers written
with 17 significant digits.

NPZ (any number of chains): arrays ``times, q, p, xi, kinetic_integral,
arc_length, active_time, chain_ids`` plus ``format``, ``scheme`` and ``dt``.
The archive uses fixed zip timestamps so equal runs give identical bytes.
"""

from __future__ import annotations

import hashlib
import io as _io
import warnings
import zipfile

import numpy as np

from .dynamics import Trajectory
from .errors import ContractError

__all__ = ["TRAJECTORY_FORMAT", "write_trajectory_csv", "read_trajectory_csv", "write_trajectory_npz",
           "read_trajectory_npz", "read_trajectory", "write_csv_table", "file_sha256"]

TRAJECTORY_FORMAT = "nhb-trajectory/1"
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_csv_table(path, header, rows, comment: str | None = None) -> None:
    """Write a numeric table with deterministic formatting."""
    with open(path, "w", newline="\n") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(v) for v in r) + "\n")


def write_trajectory_csv(path, traj: Trajectory) -> None:
    """Write a single-chain trajectory as CSV."""
    if traj.batched:
        raise ContractError("CSV holds one chain; use Trajectory.chain(i) or the NPZ format")
    n = traj.q.shape[-1]
    header = ["t"] + [f"q{j}" for j in range(n)] + [f"p{j}" for j in range(n)] + ["xi"]
    rows = np.column_stack([traj.times, traj.q, traj.p, traj.xi])
    write_csv_table(path, header, rows, comment=f"format: {TRAJECTORY_FORMAT}")


def read_trajectory_csv(path) -> Trajectory:
    """Read a CSV trajectory; path integrals are not stored and come back as NaN."""
    with open(path) as fh:
        first = fh.readline().strip()
        if first != f"# format: {TRAJECTORY_FORMAT}":
            raise ContractError(f"{path}: missing or unsupported format line {first!r}")
        header = fh.readline().strip().split(",")
        with warnings.catch_warnings():
            # an empty body is reported below as a contract error
            warnings.simplefilter("ignore", UserWarning)
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    n = (len(header) - 2) // 2
    if header[0] != "t" or header[-1] != "xi" or len(header) != 2 * n + 2:
        raise ContractError(f"{path}: unexpected header {header}")
    if data.shape[0] == 0:
        raise ContractError(f"{path}: trajectory is empty")
    nan = np.full(data.shape[0], np.nan)
    return Trajectory(times=data[:, 0], q=data[:, 1:1 + n], p=data[:, 1 + n:1 + 2 * n], xi=data[:, -1],
                      kinetic_integral=nan, arc_length=nan.copy(), active_time=nan.copy(),
                      chain_ids=np.array([0]), scheme="unknown", dt=float("nan"))


_NPZ_FIELDS = ("times", "q", "p", "xi", "kinetic_integral", "arc_length", "active_time", "chain_ids")


def write_trajectory_npz(path, traj: Trajectory) -> None:
    arrays = {k: np.ascontiguousarray(getattr(traj, k)) for k in _NPZ_FIELDS}
    arrays["format"] = np.array(TRAJECTORY_FORMAT)
    arrays["scheme"] = np.array(traj.scheme)
    arrays["dt"] = np.array(traj.dt)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(arrays):
            buf = _io.BytesIO()
            np.lib.format.write_array(buf, arrays[name], allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=_ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())


def read_trajectory_npz(path) -> Trajectory:
    with np.load(path, allow_pickle=False) as z:
        if str(z["format"]) != TRAJECTORY_FORMAT:
            raise ContractError(f"{path}: unsupported format {str(z['format'])!r}")
        kw = {k: z[k] for k in _NPZ_FIELDS}
        if kw["times"].size == 0:
            raise ContractError(f"{path}: trajectory is empty")
        return Trajectory(**kw, scheme=str(z["scheme"]), dt=float(z["dt"]))


def read_trajectory(path) -> Trajectory:
    """Dispatch on the file suffix (``.csv`` or ``.npz``)."""
    s = str(path)
    if s.endswith(".csv"):
        return read_trajectory_csv(path)
    if s.endswith(".npz"):
        return read_trajectory_npz(path)
    raise ContractError(f"unknown trajectory file type: {path}")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
