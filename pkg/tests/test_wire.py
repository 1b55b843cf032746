import math

import pytest
from hypothesis import given, strategies as st

from vilsim.wire import (ERROR, OK, PRE_SIM2V, PRE_SUBSCRIPTION, PRE_V2SIM, PRE_V2V, ClockPoll,
                         DelayedQueue, FieldRangeError, LengthMismatchError, ProbeData, Sim2V,
                         SimProbe, Subscription, TruncatedFrameError, UdpEndpoint,
                         UnknownPreambleError, V2Sim, V2V, decode, delayed_send, encode, extrapolate,
                         frame_size, ntp_update)

reals = st.floats(allow_nan=False, allow_infinity=False, width=64)
speeds = st.floats(0.0, 1e3, allow_nan=False)
u32 = st.integers(0, 2**32 - 1)
flag = st.integers(0, 1)

probes = st.builds(ProbeData, speeds, reals, reals, reals, flag, reals)
subs = st.builds(Subscription, u32, flag, st.integers(0, 255), probes, flag)
v2sims = st.builds(V2Sim, u32, probes, flag)
sim_probes = st.builds(SimProbe, u32, flag, speeds, reals, reals, reals, flag, reals)
sim2vs = st.builds(Sim2V, st.lists(sim_probes, max_size=80).map(tuple), flag)
v2vs = st.integers(0, 40).flatmap(lambda n: st.builds(
    V2V, u32, reals, st.lists(reals, min_size=n, max_size=n), reals,
    st.lists(reals, min_size=n, max_size=n), flag))
clocks = st.builds(ClockPoll, u32, reals, reals, reals)


@given(st.one_of(subs, v2sims, sim2vs, v2vs, clocks))
def test_round_trip(msg):
    assert decode(encode(msg)) == msg


@given(st.one_of(subs, v2sims, sim2vs, v2vs, clocks), st.data())
def test_truncation_detected(msg, data):
    buf = encode(msg)
    cut = data.draw(st.integers(0, len(buf) - 1))
    with pytest.raises((TruncatedFrameError, LengthMismatchError)):
        decode(buf[:cut])


def test_v2v_frame_size():
    msg = V2V(1, 1.0, [float(i) for i in range(17)], 3.0)
    buf = encode(msg)
    assert len(buf) == 296 == frame_size(PRE_V2V, 17)
    assert buf[0] == 0x6B


def test_preambles():
    p = ProbeData(1.0, 2.0, 3.0, 0.1)
    assert encode(Subscription(3, 1, 1, p))[0] == 0x16 == PRE_SUBSCRIPTION
    assert encode(V2Sim(3, p))[0] == 0x43 == PRE_V2SIM
    assert encode(Sim2V(()))[0] == 0xEC == PRE_SIM2V


def test_decode_errors():
    with pytest.raises(TruncatedFrameError):
        decode(b"")
    with pytest.raises(UnknownPreambleError):
        decode(b"\x01\x02")
    buf = encode(V2Sim(1, ProbeData(1.0, 0, 0, 0)))
    with pytest.raises(LengthMismatchError):
        decode(buf + b"\x00")
    bad = bytearray(buf)
    bad[-1] = 7
    with pytest.raises(FieldRangeError):
        decode(bytes(bad))


def test_error_flag_ok():
    m = decode(encode(V2Sim(1, ProbeData(1.0, 0, 0, 0), OK)))
    assert m.error == OK == 1
    assert decode(encode(V2Sim(1, ProbeData(1.0, 0, 0, 0), ERROR))).error == 0


def test_encode_rejects_bad_fields():
    with pytest.raises(FieldRangeError):
        encode(V2Sim(2**32, ProbeData(1.0, 0, 0, 0)))
    with pytest.raises(FieldRangeError):
        encode(V2Sim(1, ProbeData(-1.0, 0, 0, 0)))
    with pytest.raises(FieldRangeError):
        encode(V2V(1, 0.0, [math.nan], 0.0))
    with pytest.raises(TypeError):
        encode("hello")


def test_ntp_examples():
    c = ntp_update(1.000, 1.008, 1.009, 1.007)
    assert c.offset == pytest.approx(0.005, abs=1e-12)
    assert c.round_trip == pytest.approx(0.006, abs=1e-12)
    z = ntp_update(2.0, 2.0, 2.0, 2.0)
    assert (z.offset, z.round_trip) == (0.0, 0.0)
    with pytest.raises(ValueError):
        ntp_update(1.0, 1.0, 1.0, 0.5)


@given(st.floats(-1.0, 1.0), st.floats(0.0, 0.2), st.floats(0.0, 0.2), st.floats(0.0, 0.01))
def test_ntp_asymmetric_bound(offset, d_up, d_down, proc):
    t0 = 100.0
    t1 = t0 + d_up + offset
    t2 = t1 + proc
    t3 = t2 - offset + d_down
    c = ntp_update(t0, t1, t2, t3)
    assert abs(c.offset - offset) <= abs(d_up - d_down) / 2 + 1e-9
    assert c.round_trip == pytest.approx(d_up + d_down, abs=1e-9)


def test_extrapolate():
    assert extrapolate(100.0, 10.0, 0.1) == pytest.approx(100.5)
    assert extrapolate(100.0, 10.0, 0.0) == 100.0
    assert extrapolate(100.0, 0.0, 0.3) == 100.0


def test_delay_queue():
    q = DelayedQueue(0.1)
    assert delayed_send(q, "a", 0.0) == pytest.approx(0.1)
    q.push("b", 0.01)
    assert q.pop_ready(0.05) == []
    assert q.pop_ready(0.1) == ["a"]
    assert q.pop_ready(0.2) == ["b"]
    z = DelayedQueue(0.0)
    z.push("c", 1.0)
    assert z.pop_ready(1.0) == ["c"]
    with pytest.raises(ValueError):
        DelayedQueue(-1.0)


def test_udp_loopback_round_trip():
    with UdpEndpoint() as a, UdpEndpoint() as b:
        msg = V2V(5, 1.5, [1.0, 2.0], 3.0)
        a.send(msg, b.address)
        got = b.recv(2.0)
        assert got is not None and got[0] == msg
        b.sock.sendto(b"\xff\x00", a.address)
        assert a.recv(0.3) is None
