"""Finite-level dynamic quantizers and bit budgets.

A static quantizer with range ``R`` and sensitivity ``delta`` satisfies

* ``|q(v) - v| <= delta`` whenever ``|v| <= R``;
* ``q(v) = 0`` whenever ``|v| < delta``.

The dynamic version scales both by a zoom factor: ``q_zoom(v) = zoom * q(v / zoom)``.
Geometry is a componentwise mid-tread grid with per-axis step
``delta / sqrt(dim)``, so the 2-norm error is at most ``delta / 2`` and the
scalar ``delta = 1`` case is plain rounding to the nearest integer.
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .linalg import norm2

# Relative slack on the saturation check; absorbs roundoff in zoom laws
# whose guarantee is an exact equality.
SATURATION_RTOL = 1e-9


class SaturationError(ValueError):
    """Input outside the quantizer range; a zoom law invariant was violated."""


class AlphabetError(ValueError):
    pass


@dataclass(frozen=True)
class QuantizerSpec:
    dim: int
    R: float
    delta: float

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if not (self.R > 0 and self.delta > 0):
            raise ValueError("R and delta must be positive")
        if self.R < self.delta:
            raise ValueError(f"R/delta = {self.R / self.delta:g} < 1")

    @property
    def step(self):
        return self.delta / math.sqrt(self.dim)

    @property
    def max_index(self):
        return int(math.ceil(self.R * (1.0 + SATURATION_RTOL) / self.step))

    @property
    def levels_per_axis(self):
        return 2 * self.max_index + 1

    @property
    def codeword_bits(self):
        """Bits per transmitted symbol, one codeword reserved for the dead zone."""
        return int(math.ceil(math.log2(self.levels_per_axis**self.dim + 1)))


def quantize_static(spec, v):
    """Quantize ``v`` with the static ``(R, delta)`` quantizer.

    Returns
    -------
    value : ndarray, shape (dim,)
    symbol : ndarray of int64, shape (dim,)
        Integer grid indices; ``value == symbol * spec.step``.
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape != (spec.dim,):
        raise ValueError(f"expected a vector of length {spec.dim}, got {v.shape}")
    mag = norm2(v)
    if not mag <= spec.R * (1.0 + SATURATION_RTOL):
        raise SaturationError(f"|v| = {mag:.6g} exceeds range R = {spec.R:.6g}")
    if mag < spec.delta:
        sym = np.zeros(spec.dim, dtype=np.int64)
    else:
        sym = np.rint(v / spec.step).astype(np.int64)
    return sym * spec.step, sym


def quantize_dynamic(spec, zoom, v):
    """``zoom * quantize_static(v / zoom)``; range ``R*zoom``, sensitivity ``delta*zoom``."""
    zoom = float(zoom)
    if not zoom > 0:
        raise ValueError(f"zoom must be positive, got {zoom}")
    v = np.asarray(v, dtype=float)
    try:
        _, sym = quantize_static(spec, v / zoom)
    except SaturationError as exc:
        raise SaturationError(f"{exc} (zoom = {zoom:.6g})") from None
    return decode(spec, zoom, sym), sym


def decode(spec, zoom, symbol):
    """Reconstruct the quantized value from its symbol and the shared zoom."""
    sym = np.asarray(symbol)
    if sym.shape != (spec.dim,) or not np.issubdtype(sym.dtype, np.integer):
        raise AlphabetError(f"symbol must be {spec.dim} integers, got {sym!r}")
    if np.abs(sym).max(initial=0) > spec.max_index:
        raise AlphabetError(
            f"symbol {sym.tolist()} outside alphabet |index| <= {spec.max_index}"
        )
    return float(zoom) * (sym.astype(np.int64) * spec.step)


@dataclass
class ZoomState:
    value: float
    update_count: int = 0

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError(f"zoom must stay positive, got {self.value}")

    def update(self, value):
        if not value > 0:
            raise ValueError(f"zoom must stay positive, got {value}")
        self.value = float(value)
        self.update_count += 1


@dataclass
class DynamicQuantizer:
    """One end (encoder or decoder) of a quantized channel.

    Both ends run the same zoom law, so only the symbol crosses the channel.
    """

    spec: QuantizerSpec
    zoom: ZoomState = field(default_factory=lambda: ZoomState(1.0))

    def encode(self, v):
        return quantize_dynamic(self.spec, self.zoom.value, v)

    def decode(self, symbol):
        return decode(self.spec, self.zoom.value, symbol)


def encode_packet(t, symbol):
    """Wire format: float64 time-stamp then one int32 per axis, little endian."""
    sym = np.asarray(symbol, dtype=np.int64)
    return struct.pack(f"<d{sym.size}i", float(t), *(int(s) for s in sym))


def decode_packet(data, dim):
    vals = struct.unpack(f"<d{dim}i", data)
    return vals[0], np.array(vals[1:], dtype=np.int64)


def _lyap_spread(P):
    lam = np.linalg.eigvalsh(np.asarray(P, dtype=float))
    return math.sqrt(lam[0] / lam[-1])


def required_ratio_output(P_o, C, chi_o, rho_bar):
    """Sensitivity-to-range ratio ``delta_y / R_y`` needed by the output zoom law."""
    if not 0 < rho_bar < 1:
        raise ValueError(f"rho_bar must lie in (0, 1), got {rho_bar}")
    return _lyap_spread(P_o) * rho_bar / (chi_o * norm2(C))


def required_ratio_input(P_c, K, chi_c, rho_bar_u):
    """Sensitivity-to-range ratio ``delta_u / R_u`` needed by the input zoom law."""
    if not 0 < rho_bar_u < 1:
        raise ValueError(f"rho_bar_u must lie in (0, 1), got {rho_bar_u}")
    return _lyap_spread(P_c) * rho_bar_u / (chi_c * norm2(K))


def ratio_bits(ratio):
    """``ceil(log2(R / delta))`` for a given ``delta / R``."""
    return int(math.ceil(math.log2(1.0 / ratio)))
