"""Binary channel datasets (CHD1), CSV channel import and MPN1 checkpoints.

All binary formats are little-endian.

CHD1::

    b"CHD1" | u32 N | u32 count | f64 f0 | f64 bandwidth
    count x ( u32 L | L x (f64 re alpha, f64 im alpha, f64 tau) | N x (f64 re h, f64 im h) )

MPN1::

    b"MPN1" | u32 variant (0 constrained, 1 unconstrained) | u32 N | u32 A
    | f64 x P parameters in flattening order
    | optional: b"ADAM" | u64 step | f64 x P first moment | f64 x P second moment
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .signal_core import ChannelSample, PathComponent
from .unfolded import AdamState, ConstrainedParams, UnconstrainedParams

CHD_MAGIC = b"CHD1"
MPN_MAGIC = b"MPN1"
ADAM_MAGIC = b"ADAM"
VARIANT_TAGS = {"constrained": 0, "unconstrained": 1}


class FormatError(ValueError):
    """Malformed or truncated file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


@dataclass
class ChannelDataset:
    n_subcarriers: int
    center_freq_hz: float
    bandwidth_hz: float
    channels: list[ChannelSample]

    def __len__(self):
        return len(self.channels)

    def matrix(self) -> np.ndarray:
        return np.stack([c.h for c in self.channels], axis=1)


def write_chd(path, dataset: ChannelDataset) -> None:
    n = dataset.n_subcarriers
    parts = [CHD_MAGIC, struct.pack("<IIdd", n, len(dataset.channels), dataset.center_freq_hz,
                                    dataset.bandwidth_hz)]
    for ch in dataset.channels:
        h = np.asarray(ch.h, dtype=np.complex128)
        if h.size != n:
            raise ValueError(f"channel has {h.size} entries, dataset declares N={n}")
        parts.append(struct.pack("<I", len(ch.paths)))
        if ch.paths:
            rec = np.array([(p.alpha.real, p.alpha.imag, p.tau_s) for p in ch.paths], dtype="<f8")
            parts.append(rec.tobytes())
        parts.append(np.column_stack([h.real, h.imag]).astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_chd(path) -> ChannelDataset:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != CHD_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {CHD_MAGIC!r}", 0)
    header = struct.calcsize("<IIdd")
    if len(data) < 4 + header:
        raise FormatError("truncated header", len(data))
    n, count, f0, bw = struct.unpack_from("<IIdd", data, 4)
    pos = 4 + header
    channels = []
    for k in range(count):
        if pos + 4 > len(data):
            raise FormatError(f"truncated file: expected {count} records, found {k}", pos)
        (lp,) = struct.unpack_from("<I", data, pos)
        pos += 4
        need = lp * 24 + n * 16
        if pos + need > len(data):
            raise FormatError(f"truncated file: expected {count} records, found {k}", pos)
        rec = np.frombuffer(data, dtype="<f8", count=lp * 3, offset=pos).reshape(lp, 3)
        pos += lp * 24
        hv = np.frombuffer(data, dtype="<f8", count=2 * n, offset=pos).reshape(n, 2)
        pos += n * 16
        paths = tuple(PathComponent(complex(a, b), float(t)) for a, b, t in rec)
        channels.append(ChannelSample(hv[:, 0] + 1j * hv[:, 1], paths))
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after {count} records", pos)
    return ChannelDataset(n, f0, bw, channels)


def read_csv_channels(path, n_subcarriers: int) -> list[ChannelSample]:
    """One channel per row as ``re h_1, im h_1, ..., re h_N, im h_N``."""
    out = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2 * n_subcarriers:
                raise FormatError(f"line {lineno}: {len(row)} columns, expected {2 * n_subcarriers} "
                                  f"(2N interleaved re/im values for N={n_subcarriers})")
            try:
                vals = np.array([float(c) for c in row])
            except ValueError as exc:
                raise FormatError(f"line {lineno}: {exc}") from None
            out.append(ChannelSample(vals[0::2] + 1j * vals[1::2], ()))
    return out


def write_checkpoint(path, params, n_atoms: int, adam: AdamState | None = None) -> None:
    if isinstance(params, ConstrainedParams):
        tag, n = VARIANT_TAGS["constrained"], params.gains.size
    elif isinstance(params, UnconstrainedParams):
        tag, n = VARIANT_TAGS["unconstrained"], params.weights.shape[0]
        if params.weights.shape[1] != n_atoms:
            raise ValueError("n_atoms does not match the weight matrix")
    else:
        raise TypeError(f"unknown parameter type {type(params).__name__}")
    flat = params.flatten().astype("<f8")
    parts = [MPN_MAGIC, struct.pack("<III", tag, n, n_atoms), flat.tobytes()]
    if adam is not None:
        parts += [ADAM_MAGIC, struct.pack("<Q", adam.step), adam.m.astype("<f8").tobytes(),
                  adam.v.astype("<f8").tobytes()]
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path):
    """Returns ``(params, n_atoms, adam_moments)``; the last is ``None`` or ``(step, m, v)``."""
    data = Path(path).read_bytes()
    if data[:4] != MPN_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MPN_MAGIC!r}", 0)
    if len(data) < 16:
        raise FormatError("truncated header", len(data))
    tag, n, a = struct.unpack_from("<III", data, 4)
    if tag == 0:
        count = 2 * n + 1
    elif tag == 1:
        count = 2 * n * a
    else:
        raise FormatError(f"unknown variant tag {tag}", 4)
    pos = 16
    if len(data) < pos + 8 * count:
        raise FormatError(f"truncated payload: expected {count} parameters", len(data))
    flat = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
    pos += 8 * count
    params = ConstrainedParams.unflatten(flat, n) if tag == 0 else UnconstrainedParams.unflatten(flat, n, a)
    adam = None
    if pos < len(data):
        if data[pos:pos + 4] != ADAM_MAGIC:
            raise FormatError("unexpected trailing data", pos)
        pos += 4
        if len(data) != pos + 8 + 16 * count:
            raise FormatError("truncated optimizer state", pos)
        (step,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        m = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
        v = np.frombuffer(data, dtype="<f8", count=count, offset=pos + 8 * count).astype(np.float64)
        adam = (int(step), m, v)
    return params, a, adam
