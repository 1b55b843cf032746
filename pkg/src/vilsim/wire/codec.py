"""Fixed-layout binary codec for server/client messages.

Every frame is one preamble byte followed by a little-endian payload with no
padding.  Floats are IEEE-754 binary64; integers are unsigned.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Union

PRE_SUBSCRIPTION = 0x16
PRE_V2SIM = 0x43
PRE_SIM2V = 0xEC
PRE_V2V = 0x6B
# auxiliary request/response used for clock polling
PRE_CLOCK = 0x7A

OK = 1
ERROR = 0

VEHICLE_HUMAN = 0
VEHICLE_CAV = 1

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_PROBE = struct.Struct("<ddddBd")            # v, x, y, heading, brake, timestamp
_SUB_HEAD = struct.Struct("<BIB")            # sim_physical_flag, vehicle_id, sub_flag
_V2SIM_HEAD = struct.Struct("<I")
_SIM_PROBE = struct.Struct("<IBddddBd")      # id, type, v, dx, dy, heading, brake, timestamp
_V2V_HEAD = struct.Struct("<IdH")            # vehicle_id, timestamp, n
_CLOCK = struct.Struct("<Iddd")              # vehicle_id, t0, t1, t2


class WireError(ValueError):
    """Base class for codec failures."""


class UnknownPreambleError(WireError):
    pass


class TruncatedFrameError(WireError):
    pass


class LengthMismatchError(WireError):
    """Frame length disagrees with the size implied by its count fields."""


class FieldRangeError(WireError):
    pass


def _check_u(name: str, value: int, bits: int):
    if not isinstance(value, int) or not 0 <= value < (1 << bits):
        raise FieldRangeError(f"{name}={value!r} does not fit u{bits}")


def _check_flag(name: str, value: int):
    if value not in (0, 1):
        raise FieldRangeError(f"{name} must be 0 or 1, got {value!r}")


def _check_real(name: str, value: float):
    if not math.isfinite(value):
        raise FieldRangeError(f"{name} must be finite")


@dataclass(frozen=True)
class ProbeData:
    v: float
    x: float
    y: float
    heading: float
    brake_on: int = 0
    timestamp: float = 0.0

    def validate(self):
        for name in ("v", "x", "y", "heading", "timestamp"):
            _check_real(name, getattr(self, name))
        if self.v < 0:
            raise FieldRangeError("probe velocity must be non-negative")
        _check_flag("brake_on", self.brake_on)

    def pack(self) -> bytes:
        self.validate()
        return _PROBE.pack(self.v, self.x, self.y, self.heading, self.brake_on, self.timestamp)


@dataclass(frozen=True)
class Subscription:
    vehicle_id: int
    sim_physical_flag: int = 1
    sub_flag: int = 1
    probe: ProbeData = ProbeData(0.0, 0.0, 0.0, 0.0)
    error: int = OK


@dataclass(frozen=True)
class V2Sim:
    vehicle_id: int
    probe: ProbeData
    error: int = OK


@dataclass(frozen=True)
class SimProbe:
    """One surrounding vehicle as reported by the server, relative to the receiver."""
    vehicle_id: int
    vehicle_type: int
    v: float
    dx: float
    dy: float
    heading: float
    brake_on: int = 0
    timestamp: float = 0.0


@dataclass(frozen=True)
class Sim2V:
    probes: tuple[SimProbe, ...] = ()
    error: int = OK

    @property
    def count(self) -> int:
        return len(self.probes)


@dataclass(frozen=True)
class V2V:
    vehicle_id: int
    timestamp: float
    s: tuple[float, ...]
    v_end: float
    l: tuple[float, ...] | None = None
    error: int = OK

    def __post_init__(self):
        object.__setattr__(self, "s", tuple(float(t) for t in self.s))
        lat = (0.0,) * len(self.s) if self.l is None else tuple(float(t) for t in self.l)
        object.__setattr__(self, "l", lat)

    @property
    def n(self) -> int:
        return len(self.s)


@dataclass(frozen=True)
class ClockPoll:
    vehicle_id: int
    t0: float
    t1: float = 0.0
    t2: float = 0.0


WireMessage = Union[Subscription, V2Sim, Sim2V, V2V, ClockPoll]


def frame_size(kind: int, count: int = 0) -> int:
    """Byte length of a frame of the given preamble and count field."""
    if kind == PRE_SUBSCRIPTION:
        return 1 + _SUB_HEAD.size + _PROBE.size + 1
    if kind == PRE_V2SIM:
        return 1 + _V2SIM_HEAD.size + _PROBE.size + 1
    if kind == PRE_SIM2V:
        return 1 + 2 + count * _SIM_PROBE.size + 1
    if kind == PRE_V2V:
        return 1 + _V2V_HEAD.size + 16 * count + 8 + 1
    if kind == PRE_CLOCK:
        return 1 + _CLOCK.size
    raise UnknownPreambleError(f"unknown preamble 0x{kind:02X}")


def encode(m: WireMessage) -> bytes:
    if isinstance(m, Subscription):
        _check_flag("sim_physical_flag", m.sim_physical_flag)
        _check_u("vehicle_id", m.vehicle_id, 32)
        _check_u("sub_flag", m.sub_flag, 8)
        _check_flag("error", m.error)
        return (bytes([PRE_SUBSCRIPTION]) + _SUB_HEAD.pack(m.sim_physical_flag, m.vehicle_id, m.sub_flag)
                + m.probe.pack() + _U8.pack(m.error))
    if isinstance(m, V2Sim):
        _check_u("vehicle_id", m.vehicle_id, 32)
        _check_flag("error", m.error)
        return bytes([PRE_V2SIM]) + _V2SIM_HEAD.pack(m.vehicle_id) + m.probe.pack() + _U8.pack(m.error)
    if isinstance(m, Sim2V):
        _check_u("count", m.count, 16)
        _check_flag("error", m.error)
        out = [bytes([PRE_SIM2V]), _U16.pack(m.count)]
        for p in m.probes:
            _check_u("vehicle_id", p.vehicle_id, 32)
            _check_flag("vehicle_type", p.vehicle_type)
            _check_flag("brake_on", p.brake_on)
            for name in ("v", "dx", "dy", "heading", "timestamp"):
                _check_real(name, getattr(p, name))
            if p.v < 0:
                raise FieldRangeError("probe velocity must be non-negative")
            out.append(_SIM_PROBE.pack(p.vehicle_id, p.vehicle_type, p.v, p.dx, p.dy,
                                       p.heading, p.brake_on, p.timestamp))
        out.append(_U8.pack(m.error))
        return b"".join(out)
    if isinstance(m, V2V):
        _check_u("vehicle_id", m.vehicle_id, 32)
        _check_u("n", m.n, 16)
        _check_flag("error", m.error)
        if len(m.l) != m.n:
            raise FieldRangeError("lateral offsets must match the number of plan points")
        for val in (m.timestamp, m.v_end, *m.s, *m.l):
            _check_real("plan value", val)
        return (bytes([PRE_V2V]) + _V2V_HEAD.pack(m.vehicle_id, m.timestamp, m.n)
                + struct.pack(f"<{m.n}d", *m.s) + struct.pack(f"<{m.n}d", *m.l)
                + struct.pack("<dB", m.v_end, m.error))
    if isinstance(m, ClockPoll):
        _check_u("vehicle_id", m.vehicle_id, 32)
        return bytes([PRE_CLOCK]) + _CLOCK.pack(m.vehicle_id, m.t0, m.t1, m.t2)
    raise TypeError(f"cannot encode {type(m).__name__}")


def _need(buf: bytes, size: int):
    if len(buf) < size:
        raise TruncatedFrameError(f"frame has {len(buf)} bytes, needs {size}")
    if len(buf) > size:
        raise LengthMismatchError(f"frame has {len(buf)} bytes, expected {size}")


def _probe(buf: bytes, off: int) -> ProbeData:
    v, x, y, th, brake, ts = _PROBE.unpack_from(buf, off)
    p = ProbeData(v, x, y, th, brake, ts)
    p.validate()
    return p


def _error_flag(buf: bytes) -> int:
    flag = buf[-1]
    _check_flag("error", flag)
    return flag


def decode(buf: bytes) -> WireMessage:
    buf = bytes(buf)
    if not buf:
        raise TruncatedFrameError("empty frame")
    kind = buf[0]
    if kind == PRE_SUBSCRIPTION:
        _need(buf, frame_size(kind))
        phys, vid, sub = _SUB_HEAD.unpack_from(buf, 1)
        _check_flag("sim_physical_flag", phys)
        return Subscription(vid, phys, sub, _probe(buf, 1 + _SUB_HEAD.size), _error_flag(buf))
    if kind == PRE_V2SIM:
        _need(buf, frame_size(kind))
        (vid,) = _V2SIM_HEAD.unpack_from(buf, 1)
        return V2Sim(vid, _probe(buf, 1 + _V2SIM_HEAD.size), _error_flag(buf))
    if kind == PRE_SIM2V:
        if len(buf) < 3:
            raise TruncatedFrameError("Sim2V frame shorter than its header")
        (count,) = _U16.unpack_from(buf, 1)
        _need(buf, frame_size(kind, count))
        probes = []
        for k in range(count):
            vid, typ, v, dx, dy, th, brake, ts = _SIM_PROBE.unpack_from(buf, 3 + k * _SIM_PROBE.size)
            _check_flag("vehicle_type", typ)
            _check_flag("brake_on", brake)
            probes.append(SimProbe(vid, typ, v, dx, dy, th, brake, ts))
        return Sim2V(tuple(probes), _error_flag(buf))
    if kind == PRE_V2V:
        if len(buf) < 1 + _V2V_HEAD.size:
            raise TruncatedFrameError("V2V frame shorter than its header")
        vid, ts, n = _V2V_HEAD.unpack_from(buf, 1)
        _need(buf, frame_size(kind, n))
        off = 1 + _V2V_HEAD.size
        s = struct.unpack_from(f"<{n}d", buf, off)
        lat = struct.unpack_from(f"<{n}d", buf, off + 8 * n)
        (v_end,) = struct.unpack_from("<d", buf, off + 16 * n)
        return V2V(vid, ts, s, v_end, lat, _error_flag(buf))
    if kind == PRE_CLOCK:
        _need(buf, frame_size(kind))
        return ClockPoll(*_CLOCK.unpack_from(buf, 1))
    raise UnknownPreambleError(f"unknown preamble 0x{kind:02X}")
