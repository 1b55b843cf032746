from .clock import ClockSync, extrapolate, ntp_update
from .codec import (
    ERROR, OK, PRE_CLOCK, PRE_SIM2V, PRE_SUBSCRIPTION, PRE_V2SIM, PRE_V2V, VEHICLE_CAV,
    VEHICLE_HUMAN, ClockPoll, FieldRangeError, LengthMismatchError, ProbeData, Sim2V,
    SimProbe, Subscription, TruncatedFrameError, UnknownPreambleError, V2Sim, V2V,
    WireError, WireMessage, decode, encode, frame_size,
)
from .delay import DelayedQueue, delayed_send
from .transport import UdpEndpoint
