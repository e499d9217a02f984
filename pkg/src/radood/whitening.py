"""Snapshot segmentation, local neighborhood whitening, and cube file IO.

The whitening chain per range gate r is: estimate a sample covariance from
the snapshots of nearby gates (excluding r and an optional guard band), add
a ridge term, apply the inverse matrix square root to each of r's snapshots
and take the unitary DFT.  Normalizing with data from *other* gates keeps a
target at gate r from whitening itself away.

Cube file format (little-endian): magic ``CPXC``, version u32 = 1,
n_ranges u32, n_pulses u32, then row-major interleaved (re, im) float32
pairs.  float32 is the interchange width; all internal computation is
double precision.
"""

import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .covariance import RIDGE_KIND, CovarianceEstimate, ridge_regularize
from .errors import FormatError, InsufficientDataError, InvalidArgumentError
from .linalg import dft_unitary, herm_inv_sqrt
from .simulate import RangePulseCube

CUBE_MAGIC = b"CPXC"
CUBE_VERSION = 1
# Allocation guard: reject headers whose payload cannot be a real recording.
_MAX_CELLS = 2 ** 31


class SnapshotIndex(NamedTuple):
    r: int  # range gate
    p: int  # slow-time start index


@dataclass(frozen=True)
class WhitenConfig:
    m: int
    stride: int = 1
    n_adj: int = 8
    guard: int = 0
    eps_ridge: float = 1e-2

    def __post_init__(self):
        if self.m < 1 or self.stride < 1:
            raise InvalidArgumentError("m and stride must be positive")
        if self.n_adj < 1:
            raise InvalidArgumentError("n_adj must be at least 1")
        if self.guard < 0:
            raise InvalidArgumentError("guard must be nonnegative")
        if self.eps_ridge <= 0:
            raise InvalidArgumentError("eps_ridge must be positive")


@dataclass
class DopplerProfile:
    bins: np.ndarray
    origin: SnapshotIndex = None
    whitened: bool = False


def segment(cube, m, stride=1):
    """Slow-time snapshots of length m at hops of ``stride`` for every gate.

    Returns a list of (SnapshotIndex, vector); the count per gate is
    floor((N_pulses - m)/stride) + 1.
    """
    if cube.n_pulses < m:
        raise InvalidArgumentError(
            f"cube has {cube.n_pulses} pulses, fewer than snapshot length {m}")
    starts = range(0, cube.n_pulses - m + 1, stride)
    out = []
    for r in range(cube.n_ranges):
        row = cube.data[r]
        for p in starts:
            out.append((SnapshotIndex(r, p), row[p:p + m]))
    return out


def _group_by_gate(snapshots):
    by_gate = {}
    for idx, vec in snapshots:
        by_gate.setdefault(idx.r, []).append(vec)
    return {r: np.asarray(vs) for r, vs in by_gate.items()}


def neighborhood_gates(r, n_ranges, n_adj, guard=0):
    """Reference gates around r: ceil(n_adj/2) per side past the guard band."""
    half = (n_adj + 1) // 2
    gates = []
    for off in range(guard + 1, guard + half + 1):
        if r - off >= 0:
            gates.append(r - off)
        if r + off < n_ranges:
            gates.append(r + off)
    return sorted(gates)


def gather_neighborhood(snapshots, r, cfg, n_ranges=None):
    """Stack the reference snapshots of r's neighborhood gates into (K_r, m)."""
    by_gate = snapshots if isinstance(snapshots, dict) else _group_by_gate(snapshots)
    if n_ranges is None:
        n_ranges = max(by_gate) + 1
    gates = neighborhood_gates(r, n_ranges, cfg.n_adj, cfg.guard)
    refs = [by_gate[g] for g in gates if g in by_gate]
    if not refs:
        raise InsufficientDataError(
            f"empty reference neighborhood for gate {r} "
            f"(n_adj={cfg.n_adj}, guard={cfg.guard}, n_ranges={n_ranges})")
    return np.concatenate(refs, axis=0)


def local_covariance(snapshots, r, cfg, n_ranges=None):
    """Ridge-regularized SCM over the snapshots of r's neighborhood gates.

    ``snapshots`` is the output of :func:`segment`.  The cell under test's
    own gate (and any guard gates) never contributes, so a target at gate r
    leaves the result bit-identical.
    """
    Y = gather_neighborhood(snapshots, r, cfg, n_ranges)
    K_r = Y.shape[0]
    R = Y.T @ Y.conj() / K_r
    return CovarianceEstimate(matrix=ridge_regularize(R, cfg.eps_ridge),
                              kind=RIDGE_KIND, k_samples=K_r)


def whiten_profile(y, R_reg, origin=None):
    """Whitened Doppler profile DFT(R_reg^{-1/2} y)."""
    mat = R_reg.matrix if isinstance(R_reg, CovarianceEstimate) else np.asarray(R_reg)
    B = herm_inv_sqrt(mat)
    return DopplerProfile(bins=dft_unitary(B @ np.asarray(y, dtype=np.complex128)),
                          origin=origin, whitened=True)


def whiten_cube(cube, cfg):
    """Run the whole local-whitening chain over a cube.

    Returns (profiles, index) where profiles is (n_gates * n_snaps, m) and
    index the matching list of SnapshotIndex.  Per-gate processing is
    independent, so gates can safely be distributed over workers.
    """
    snaps = segment(cube, cfg.m, cfg.stride)
    by_gate = _group_by_gate(snaps)
    profiles, index = [], []
    starts = list(range(0, cube.n_pulses - cfg.m + 1, cfg.stride))
    for r in sorted(by_gate):
        est = local_covariance(by_gate, r, cfg, n_ranges=cube.n_ranges)
        B = herm_inv_sqrt(est.matrix)
        white = by_gate[r] @ B.T  # rows y @ B^T == (B y)^T since B Hermitian
        profiles.append(dft_unitary(white))
        index.extend(SnapshotIndex(r, p) for p in starts)
    return np.concatenate(profiles, axis=0), index


def write_cube(cube, path):
    """Serialize a cube to the CPXC format (float32 interchange width)."""
    data32 = np.asarray(cube.data, dtype="<c8")
    header = CUBE_MAGIC + struct.pack("<III", CUBE_VERSION, cube.n_ranges, cube.n_pulses)
    with open(path, "wb") as f:
        f.write(header)
        f.write(data32.tobytes())


def read_cube(path):
    """Read a CPXC cube file, validating the header before any allocation."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CUBE_MAGIC:
            raise FormatError(f"bad magic {magic!r} at offset 0", offset=0)
        head = f.read(12)
        if len(head) != 12:
            raise FormatError("truncated header", offset=4)
        version, n_ranges, n_pulses = struct.unpack("<III", head)
        if version != CUBE_VERSION:
            raise FormatError(f"unsupported cube version {version}", offset=4)
        if n_ranges < 1 or n_pulses < 1:
            raise FormatError(f"bad dimensions {n_ranges} x {n_pulses}", offset=8)
        cells = n_ranges * n_pulses
        if cells > _MAX_CELLS:
            raise FormatError(f"dimension overflow: {n_ranges} x {n_pulses} cells", offset=8)
        payload = f.read()
    expected = cells * 8
    if len(payload) != expected:
        raise FormatError(
            f"payload is {len(payload)} bytes, header implies {expected}", offset=16)
    data = np.frombuffer(payload, dtype="<c8").reshape(n_ranges, n_pulses)
    return RangePulseCube(data.astype(np.complex128))
