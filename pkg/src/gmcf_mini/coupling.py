"""Per-model coupling layer over the runtime tiles.

The call pattern mirrors the per-model integration hooks: ``init`` once,
then per loop iteration ``sync`` (time rendezvous), ``pre_exchange`` on the
consumer / ``post_exchange`` on the producer, and ``finished`` after the
loop.  Time is counted in integer microsteps; models rendezvous whenever
their local time hits a multiple of the coupled interval.

Deadlock-freedom notes.  A symmetric sync answers incoming time requests
while it waits, both from the pending queue and straight off RX.  A
producer blocked in sync additionally serves data requests whose timestamp
matches its current offering (stashed by the latest ``post_exchange``);
without this, a consumer blocked on RESPDATA and a producer blocked on
RESPTIME starve each other.  At shutdown a producer drains requests until
every peer has said FIN (``drain_until_peers_finished``), and both sides
consume each other's FIN (``await_peer_fins``), so termination is race-free
regardless of which model stops first.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ProtocolError
from .runtime import Packet, PacketType, Tile, _take_pending, shift_pending, wait_for


WIND_PROFILE_DATA_ID = 1


class SyncStatus(enum.Enum):
    PROCEED = "proceed"
    PEER_FINISHED = "peer_finished"


@dataclass
class WindProfile:
    """Vertical (u, v, w) profile, one value per level, in m/s.

    ``t`` is the microstep timestamp the profile belongs to; producers stamp
    it when a profile is served.
    """

    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    t: int = 0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float32)
        self.v = np.asarray(self.v, dtype=np.float32)
        self.w = np.asarray(self.w, dtype=np.float32)
        if not (self.u.shape == self.v.shape == self.w.shape) or self.u.ndim != 1:
            raise ConfigError("wind profile components must be 1-D arrays of equal length")
        if self.u.shape[0] < 1:
            raise ConfigError("wind profile needs at least one level")

    @property
    def kp(self) -> int:
        return self.u.shape[0]

    def fingerprint(self) -> bytes:
        return self.u.tobytes() + self.v.tobytes() + self.w.tobytes() + str(self.t).encode()


@dataclass
class WindProfileSeries:
    """The last two received profiles; interpolation needs both."""

    prev: WindProfile | None = None
    next: WindProfile | None = None
    count_received: int = 0

    def shift(self, profile: WindProfile) -> None:
        self.prev = self.next
        self.next = profile
        self.count_received += 1
        if self.prev is not None and not (self.prev.t < self.next.t):
            raise ProtocolError(
                f"profile timestamps must increase: {self.prev.t} then {self.next.t}"
            )

    @property
    def can_interpolate(self) -> bool:
        return self.count_received >= 2


@dataclass
class ModelCouplingState:
    tile: Tile
    model_id: int
    peers: list[int]
    dt_microsteps: int
    coupled_interval_microsteps: int
    current_step: int = 0
    peers_finished: set[int] = field(default_factory=set)
    series: WindProfileSeries = field(default_factory=WindProfileSeries)
    # (timestamp, data_id, provider) stashed by the latest post_exchange
    offering: tuple | None = None
    finished_sent: bool = False

    @property
    def current_time(self) -> int:
        return self.current_step * self.dt_microsteps

    def at_coupled_boundary(self) -> bool:
        return self.current_time % self.coupled_interval_microsteps == 0

    def live_peers(self) -> list[int]:
        return [p for p in self.peers if p not in self.peers_finished]


def init(tile, model_id, peers, dt_microsteps, coupled_interval_microsteps) -> ModelCouplingState:
    if dt_microsteps < 1 or coupled_interval_microsteps < 1:
        raise ConfigError("dt and coupled interval must be at least one microstep")
    if coupled_interval_microsteps % dt_microsteps != 0:
        raise ConfigError(
            f"dt {dt_microsteps} does not divide coupled interval {coupled_interval_microsteps}"
        )
    return ModelCouplingState(
        tile=tile,
        model_id=model_id,
        peers=list(peers),
        dt_microsteps=dt_microsteps,
        coupled_interval_microsteps=coupled_interval_microsteps,
    )


def advance_step(state: ModelCouplingState) -> None:
    state.current_step += 1


def _answer_time_request(state: ModelCouplingState, req: Packet, own_time: int) -> None:
    if req.timestamp != own_time:
        raise ProtocolError(
            f"model {state.model_id} at t={own_time} got REQTIME stamped {req.timestamp}"
        )
    state.tile.send_out(
        Packet(PacketType.RESPTIME, state.model_id, req.source, own_time)
    )


def _serve_data_request(state: ModelCouplingState, req: Packet) -> None:
    t_off, data_id, provider = state.offering
    if req.data_id != data_id:
        raise ProtocolError(f"data request for unknown id {req.data_id} (serving {data_id})")
    if req.timestamp != t_off:
        raise ProtocolError(
            f"data request stamped {req.timestamp} but offering is for {t_off}"
        )
    profile = dataclasses.replace(provider(), t=t_off)
    state.tile.send_out(
        Packet(PacketType.RESPDATA, state.model_id, req.source, t_off, data_id, profile)
    )


def _offering_matches(state: ModelCouplingState, req: Packet) -> bool:
    if state.offering is None:
        return False
    t_off, data_id, _ = state.offering
    return req.timestamp == t_off and req.data_id == data_id


def sync(state: ModelCouplingState) -> SyncStatus:
    """Time-stamp rendezvous with every unfinished peer.

    Off coupled boundaries this is a silent no-op.  On a boundary it sends
    a time request to each live peer and collects matching time responses;
    while waiting it answers incoming time requests with its own time and
    serves data requests that match the current offering.  Any FIN seen
    records that peer and turns the result into PEER_FINISHED.
    """
    t = state.current_time
    if t % state.coupled_interval_microsteps != 0:
        return SyncStatus.PROCEED
    if not state.peers:
        return SyncStatus.PROCEED
    live = state.live_peers()
    if not live:
        return SyncStatus.PEER_FINISHED
    for p in live:
        state.tile.send_out(Packet(PacketType.REQTIME, state.model_id, p, t))

    tile = state.tile
    need = set(live)
    status = SyncStatus.PROCEED
    while need:
        req = shift_pending(tile, PacketType.REQTIME)
        if req is not None:
            _answer_time_request(state, req, t)
            continue
        pkt = _take_pending(tile, PacketType.RESPTIME, need)
        if pkt is None:
            pkt = _take_pending(tile, PacketType.FIN, need)
        if pkt is not None:
            tile.consume(pkt)
        else:
            pkt = tile.recv()
            if pkt.ptype is PacketType.REQTIME:
                tile.consume(pkt)
                _answer_time_request(state, pkt, t)
                continue
            if pkt.ptype is PacketType.REQDATA and _offering_matches(state, pkt):
                tile.consume(pkt)
                _serve_data_request(state, pkt)
                continue
            if not (pkt.ptype in (PacketType.RESPTIME, PacketType.FIN) and pkt.source in need):
                tile.bank(pkt)
                continue
            tile.consume(pkt)
        if pkt.ptype is PacketType.FIN:
            state.peers_finished.add(pkt.source)
            status = SyncStatus.PEER_FINISHED
        else:
            if pkt.timestamp != t:
                raise ProtocolError(
                    f"model {state.model_id} at t={t} got RESPTIME stamped {pkt.timestamp}"
                )
        need.discard(pkt.source)
    return status


def pre_exchange(state: ModelCouplingState, data_id: int, producer: int | None = None):
    """Consumer side: request one profile and block for the response.

    Returns the received WindProfile after shifting it into the series, or
    ``SyncStatus.PEER_FINISHED`` if the producer said FIN instead (the
    series is left untouched in that case).
    """
    if not state.at_coupled_boundary():
        raise ProtocolError("pre_exchange called off a coupled boundary")
    if producer is None:
        if len(state.peers) != 1:
            raise ConfigError("producer must be named when a model has several peers")
        producer = state.peers[0]
    if producer in state.peers_finished:
        return SyncStatus.PEER_FINISHED
    t = state.current_time
    tile = state.tile
    tile.send_out(Packet(PacketType.REQDATA, state.model_id, producer, t, data_id))
    while True:
        pkt = _take_pending(tile, PacketType.RESPDATA, {producer})
        if pkt is None:
            pkt = _take_pending(tile, PacketType.FIN, {producer})
        if pkt is not None:
            tile.consume(pkt)
        else:
            pkt = tile.recv()
            if pkt.ptype is PacketType.FIN:
                tile.consume(pkt)
                state.peers_finished.add(pkt.source)
                if pkt.source == producer:
                    return SyncStatus.PEER_FINISHED
                continue
            if pkt.ptype is PacketType.RESPDATA and pkt.source == producer:
                tile.consume(pkt)
            else:
                tile.bank(pkt)
                continue
        if pkt.ptype is PacketType.FIN:
            state.peers_finished.add(pkt.source)
            return SyncStatus.PEER_FINISHED
        if pkt.data_id != data_id:
            raise ProtocolError(f"expected data id {data_id}, got {pkt.data_id}")
        state.series.shift(pkt.payload)
        return pkt.payload


def post_exchange(state: ModelCouplingState, provider, data_id: int) -> int:
    """Producer side: serve every data request already waiting, without blocking.

    ``provider`` is invoked once per request served; with no requests it is
    never called and nothing is sent.  The (time, data id, provider) triple
    is stashed so a later sync-wait can serve stragglers for this interval.
    """
    t = state.current_time
    state.offering = (t, data_id, provider)
    tile = state.tile
    served = 0
    while (req := shift_pending(tile, PacketType.REQDATA)) is not None:
        _serve_data_request(state, req)
        served += 1
    while (pkt := tile.recv_nowait()) is not None:
        if pkt.ptype is PacketType.REQDATA:
            tile.consume(pkt)
            _serve_data_request(state, pkt)
            served += 1
        elif pkt.ptype is PacketType.FIN:
            tile.consume(pkt)
            state.peers_finished.add(pkt.source)
        else:
            tile.bank(pkt)
    return served


def drain_until_peers_finished(state: ModelCouplingState) -> int:
    """Producer shutdown: keep serving the current offering until every peer FINs.

    Requests for any other interval get a FIN instead (this producer will
    never reach their time), which unblocks the requester's wait.  Returns
    the number of data requests served during the drain.
    """
    tile = state.tile
    served = 0
    while state.live_peers():
        req = shift_pending(tile, PacketType.REQDATA)
        if req is not None:
            if _offering_matches(state, req):
                _serve_data_request(state, req)
                served += 1
            else:
                tile.send_out(Packet(PacketType.FIN, state.model_id, req.source, state.current_time))
            continue
        fin = _take_pending(tile, PacketType.FIN, set(state.live_peers()))
        if fin is not None:
            tile.consume(fin)
            state.peers_finished.add(fin.source)
            continue
        pkt = tile.recv()
        if pkt.ptype is PacketType.REQDATA:
            tile.consume(pkt)
            if _offering_matches(state, pkt):
                _serve_data_request(state, pkt)
                served += 1
            else:
                tile.send_out(Packet(PacketType.FIN, state.model_id, pkt.source, state.current_time))
        elif pkt.ptype is PacketType.REQTIME:
            # this model will never sync again; poison the requester's wait
            tile.consume(pkt)
            tile.send_out(Packet(PacketType.FIN, state.model_id, pkt.source, state.current_time))
        elif pkt.ptype is PacketType.FIN:
            tile.consume(pkt)
            state.peers_finished.add(pkt.source)
        else:
            tile.bank(pkt)
    return served


def finished(state: ModelCouplingState) -> None:
    """Broadcast FIN to every peer (idempotent: a second call sends nothing)."""
    if state.finished_sent:
        return
    state.finished_sent = True
    for p in state.peers:
        state.tile.send_out(Packet(PacketType.FIN, state.model_id, p, state.current_time))


def await_peer_fins(state: ModelCouplingState) -> None:
    """Consume the FIN of every peer that has not been seen finishing yet.

    Called after ``finished()`` so both sides of a coupling observe each
    other's shutdown; our own FIN is already out, so every peer's loop is
    guaranteed to unblock and reach its own ``finished()``.
    """
    remaining = state.live_peers()
    if not remaining:
        return
    for pkt in wait_for(state.tile, PacketType.FIN, remaining):
        state.peers_finished.add(pkt.source)


def interpolate_profile(series: WindProfileSeries, t: int) -> WindProfile:
    """Component-wise linear interpolation between the two stored profiles.

    Endpoints return the stored profiles bitwise; interior points evaluate
    prev + alpha * (next - prev) in double precision and round once back to
    single.
    """
    if not series.can_interpolate:
        raise ValueError("interpolation needs two received profiles (guard)")
    prev, nxt = series.prev, series.next
    if not (prev.t <= t <= nxt.t):
        raise ValueError(f"t={t} outside interpolation window [{prev.t}, {nxt.t}]")
    if t == prev.t:
        return WindProfile(prev.u.copy(), prev.v.copy(), prev.w.copy(), prev.t)
    if t == nxt.t:
        return WindProfile(nxt.u.copy(), nxt.v.copy(), nxt.w.copy(), nxt.t)
    alpha = (t - prev.t) / (nxt.t - prev.t)

    def lerp(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a64 = a.astype(np.float64)
        return (a64 + alpha * (b.astype(np.float64) - a64)).astype(np.float32)

    return WindProfile(lerp(prev.u, nxt.u), lerp(prev.v, nxt.v), lerp(prev.w, nxt.w), t)
