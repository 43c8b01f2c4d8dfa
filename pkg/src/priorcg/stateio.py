"""Binary snapshot of one Gibbs draw.

A state file freezes (beta, omega, lambda, tau) so a later benchmark
run can rebuild the exact conditional Gaussian from it. The layout is
little-endian and versioned:

    magic "BRGS" | version u8 | n u64 | p_total u64 | p_shrunk u64
    | tau f64 | beta f64[p_total] | omega f64[n] | lam f64[p_shrunk]
"""

from __future__ import annotations

import struct

import numpy as np

from .gibbs import ShrinkageState

MAGIC = b"BRGS"
VERSION = 1

_HEADER = struct.Struct("<4sBQQQd")


class StateFormatError(ValueError):
    """State file is truncated, malformed, or not a state file at all."""


class StateVersionError(StateFormatError):
    """State file uses a schema version this build does not read."""


def save_state(path, state: ShrinkageState) -> None:
    """Write ``state`` so that :func:`load_state` restores it bit for bit."""
    beta = np.ascontiguousarray(state.beta, dtype="<f8")
    omega = np.ascontiguousarray(state.omega, dtype="<f8")
    lam = np.ascontiguousarray(state.lam, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, omega.size, beta.size,
                              lam.size, float(state.tau)))
        fh.write(beta.tobytes())
        fh.write(omega.tobytes())
        fh.write(lam.tobytes())


def load_state(path) -> ShrinkageState:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise StateFormatError(f"{path}: truncated header "
                               f"({len(blob)} of {_HEADER.size} bytes)")
    magic, version, n, p_total, p_shrunk, tau = \
        _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise StateFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise StateVersionError(f"{path}: state schema version {version}, "
                                f"this build reads version {VERSION}")
    expected = _HEADER.size + 8 * (p_total + n + p_shrunk)
    if len(blob) != expected:
        raise StateFormatError(f"{path}: expected {expected} bytes for the "
                               f"declared shapes, found {len(blob)}")
    offset = _HEADER.size
    beta = np.frombuffer(blob, dtype="<f8", count=p_total, offset=offset)
    offset += 8 * p_total
    omega = np.frombuffer(blob, dtype="<f8", count=n, offset=offset)
    offset += 8 * n
    lam = np.frombuffer(blob, dtype="<f8", count=p_shrunk, offset=offset)
    return ShrinkageState(beta.copy(), omega.copy(), lam.copy(), tau)
