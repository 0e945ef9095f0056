"""Message-passing runtime: one worker per registered model, one tile each.

A tile is the model's communication endpoint: a main RX queue that any
worker may push to, plus one pending queue per packet type that only the
owning worker touches.  Packets pulled off RX are either consumed by the
model or banked into the pending queue for their type; nothing is dropped.

Two execution modes share all of the protocol machinery:

* ``threads``    -- every model free-runs on its own thread, receives block.
* ``sequential`` -- the same worker threads are serialized by a baton so
  exactly one runs at a time; a worker that would block on an empty RX
  queue hands the baton to the next live worker in model-id order.  This
  gives a fully deterministic interleaving, used as the determinism oracle
  for the threaded mode.
"""

from __future__ import annotations

import copy
import enum
import queue
import threading
import zlib
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import ConfigError, DeadlockError, ProtocolError


class PacketType(enum.Enum):
    REQTIME = "reqtime"
    RESPTIME = "resptime"
    REQDATA = "reqdata"
    RESPDATA = "respdata"
    FIN = "fin"


REQUEST_TYPES = frozenset({PacketType.REQTIME, PacketType.REQDATA})
RESPONSE_TYPES = frozenset({PacketType.RESPTIME, PacketType.RESPDATA})


@dataclass
class Packet:
    """Typed message between models.

    ``timestamp`` counts microsteps of the smallest configured time step.
    ``data_id`` tags the exchanged variable for REQDATA/RESPDATA and is 0
    otherwise.  ``payload`` is non-empty exactly for RESPDATA.
    """

    ptype: PacketType
    source: int
    destination: int
    timestamp: int
    data_id: int = 0
    payload: object = None

    def __post_init__(self):
        self.timestamp = int(self.timestamp)
        if self.source == self.destination:
            raise ProtocolError(f"packet source == destination ({self.source})")
        if self.timestamp < 0:
            raise ProtocolError("packet timestamp must be >= 0")
        if (self.payload is not None) != (self.ptype is PacketType.RESPDATA):
            raise ProtocolError(
                f"payload must be present exactly for RESPDATA (got {self.ptype.name})"
            )

    def key(self) -> tuple:
        """Compact identity used by the consumed-sequence audit."""
        digest = 0
        if self.payload is not None:
            raw = getattr(self.payload, "fingerprint", None)
            digest = zlib.crc32(raw() if raw else repr(self.payload).encode())
        return (self.ptype.name, self.source, self.timestamp, self.data_id, digest)


class Tile:
    """Per-model mailbox: main RX queue plus per-type pending queues.

    Any worker may enqueue to RX; only the owning model's worker dequeues
    from RX or the pending queues.  ``consumed`` records every packet
    handed to the model, in order.
    """

    def __init__(self, model_id: int, baton: "_Baton | None" = None):
        self.model_id = model_id
        self._rx: queue.SimpleQueue = queue.SimpleQueue()
        self.pending: dict[PacketType, "list[Packet]"] = {t: [] for t in PacketType}
        self.consumed: list[tuple] = []
        self._baton = baton
        self.runtime: "Runtime | None" = None  # set by the owning Runtime
        self.delivered = 0  # packets ever enqueued to rx

    def send_out(self, packet: Packet) -> None:
        """Push a packet onto another tile's RX via the owning runtime."""
        self.runtime.send(packet)

    # -- producer side (any worker) -----------------------------------
    def push(self, packet: Packet) -> None:
        self.delivered += 1
        self._rx.put(packet)

    # -- owner side ----------------------------------------------------
    def recv(self) -> Packet:
        """Blocking pull from the main RX queue (pending queues untouched)."""
        if self._baton is None:
            return self._rx.get()
        while self._rx.empty():
            self._baton.yield_blocked(self.model_id)
        return self._rx.get_nowait()

    def recv_nowait(self) -> Packet | None:
        try:
            return self._rx.get_nowait()
        except queue.Empty:
            return None

    def bank(self, packet: Packet) -> None:
        """Store a packet in the pending queue for its type."""
        self.pending[packet.ptype].append(packet)

    def consume(self, packet: Packet) -> Packet:
        """Record a packet as returned to the model."""
        self.consumed.append(packet.key())
        return packet

    def pending_count(self) -> int:
        return sum(len(q) for q in self.pending.values())

    def drain_rx_to_pending(self) -> None:
        """Bank anything still sitting in RX (end-of-run bookkeeping)."""
        while (pkt := self.recv_nowait()) is not None:
            self.bank(pkt)


@dataclass(frozen=True)
class ModelSpec:
    model_id: int
    entry: str
    dt_seconds: float


@dataclass
class RuntimeConfig:
    """Registered models and the derived microstep bookkeeping.

    Timestamps everywhere are integer microsteps of the smallest dt; the
    reference (largest) dt defines the coupled interval.  Every dt must
    divide the reference dt and be divisible by the smallest dt.
    """

    models: list[ModelSpec]
    microstep_seconds: float = field(init=False)
    coupled_interval_microsteps: int = field(init=False)

    def __post_init__(self):
        if not self.models:
            raise ConfigError("at least one model required")
        ids = sorted(m.model_id for m in self.models)
        if ids != list(range(1, len(self.models) + 1)):
            raise ConfigError(f"model ids must be distinct and contiguous from 1, got {ids}")
        dts = {m.model_id: Fraction(m.dt_seconds) for m in self.models}
        if any(dt <= 0 for dt in dts.values()):
            raise ConfigError("time steps must be positive")
        ref = max(dts.values())
        micro = min(dts.values())
        self._dt_micro = {}
        for m in self.models:
            dt = dts[m.model_id]
            if ref % dt != 0:
                raise ConfigError(f"dt {m.dt_seconds} does not divide reference dt {float(ref)}")
            if dt % micro != 0:
                raise ConfigError(f"smallest dt {float(micro)} does not divide dt {m.dt_seconds}")
            self._dt_micro[m.model_id] = int(dt / micro)
        self.microstep_seconds = float(micro)
        self.coupled_interval_microsteps = int(ref / micro)

    def dt_microsteps(self, model_id: int) -> int:
        return self._dt_micro[model_id]


@dataclass
class ModelExit:
    model_id: int
    ok: bool
    error: str | None = None

    @property
    def status(self) -> int:
        return 0 if self.ok else 1


class _Baton:
    """Serializes workers in model-id order for the sequential mode."""

    def __init__(self, order: list[int]):
        self._order = order
        self._cond = threading.Condition()
        self._current = order[0]
        self._done: set[int] = set()
        self._blocked: set[int] = set()
        self._tiles: dict[int, "Tile"] = {}

    def attach_tiles(self, tiles: dict[int, "Tile"]) -> None:
        self._tiles = tiles

    def wait_turn(self, mid: int) -> None:
        with self._cond:
            while self._current != mid:
                self._cond.wait()

    def _next_live(self, mid: int) -> int | None:
        i = self._order.index(mid)
        n = len(self._order)
        for step in range(1, n + 1):
            cand = self._order[(i + step) % n]
            if cand not in self._done:
                return cand
        return None

    def yield_blocked(self, mid: int) -> None:
        """Hand the baton on because mid's RX is empty; return when it comes back."""
        with self._cond:
            self._blocked.add(mid)
            live = {m for m in self._order if m not in self._done}
            # deadlock only if every live worker waits AND has nothing to read;
            # a worker may sit in the blocked set with a freshly refilled queue
            if live <= self._blocked and all(self._tiles[m]._rx.empty() for m in live):
                self._blocked.discard(mid)
                raise DeadlockError("all live workers blocked on empty queues")
            nxt = self._next_live(mid)
            self._current = nxt
            self._cond.notify_all()
            while self._current != mid:
                self._cond.wait()
            self._blocked.discard(mid)

    def finish(self, mid: int) -> None:
        with self._cond:
            self._done.add(mid)
            nxt = self._next_live(mid)
            if nxt is not None:
                self._current = nxt
            self._cond.notify_all()


class Runtime:
    """Owns the tiles, the send path, and the per-model workers."""

    def __init__(self, config: RuntimeConfig, worker_mode: str = "threads"):
        if worker_mode not in ("threads", "sequential"):
            raise ConfigError(f"unknown worker mode {worker_mode!r}")
        self.config = config
        self.worker_mode = worker_mode
        self._baton = None
        if worker_mode == "sequential":
            self._baton = _Baton([m.model_id for m in config.models])
        self.tiles = {m.model_id: Tile(m.model_id, self._baton) for m in config.models}
        for tile in self.tiles.values():
            tile.runtime = self
        if self._baton is not None:
            self._baton.attach_tiles(self.tiles)
        self._entries: dict[str, object] = {}
        self.send_log: list[tuple] = []  # (source, destination, ptype.name, timestamp, data_id)
        self._ran = False

    def register_entry(self, name: str, fn) -> None:
        self._entries[name] = fn

    def send(self, packet: Packet) -> None:
        """Deliver a packet to its destination tile (payload goes by value)."""
        tile = self.tiles.get(packet.destination)
        if tile is None:
            raise ProtocolError(f"unknown destination model {packet.destination}")
        if packet.payload is not None:
            packet = Packet(
                packet.ptype,
                packet.source,
                packet.destination,
                packet.timestamp,
                packet.data_id,
                copy.deepcopy(packet.payload),
            )
        self.send_log.append(
            (packet.source, packet.destination, packet.ptype.name, packet.timestamp, packet.data_id)
        )
        tile.push(packet)

    def run(self) -> dict[int, ModelExit]:
        """Run every registered model on its own worker; returns exit per model."""
        missing = [m.entry for m in self.config.models if m.entry not in self._entries]
        if missing:
            raise ConfigError(f"entry points not registered: {missing}")
        if self._ran:
            raise ConfigError("runtime has already run")
        self._ran = True
        results: dict[int, ModelExit] = {}

        def work(spec: ModelSpec) -> None:
            mid = spec.model_id
            if self._baton is not None:
                self._baton.wait_turn(mid)
            try:
                self._entries[spec.entry](self.tiles[mid], mid)
                results[mid] = ModelExit(mid, ok=True)
            except Exception as exc:  # noqa: BLE001 - worker isolation boundary
                results[mid] = ModelExit(mid, ok=False, error=f"{type(exc).__name__}: {exc}")
                # release anyone blocked on this model
                for other in self.tiles:
                    if other != mid:
                        self.send(Packet(PacketType.FIN, mid, other, 0))
            finally:
                if self._baton is not None:
                    self._baton.finish(mid)

        threads = [
            threading.Thread(target=work, args=(spec,), name=f"model-{spec.model_id}", daemon=True)
            for spec in self.config.models
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for tile in self.tiles.values():
            tile.drain_rx_to_pending()
        return results


def create_runtime(config: RuntimeConfig, worker_mode: str = "threads") -> Runtime:
    return Runtime(config, worker_mode)


def send(runtime: Runtime, packet: Packet) -> None:
    runtime.send(packet)


def _take_pending(tile: Tile, ptype: PacketType, sources: set[int]) -> Packet | None:
    pend = tile.pending[ptype]
    for idx, pkt in enumerate(pend):
        if pkt.source in sources:
            del pend[idx]
            return pkt
    return None


def wait_for(tile: Tile, ptype: PacketType, from_ids) -> list[Packet]:
    """Block until one packet of ``ptype`` from each model in ``from_ids``.

    Pending queues are drained before RX is touched.  Packets of other
    types (or the right type from other sources) encountered on RX are
    banked to their pending queues.  A FIN from an awaited model satisfies
    that model's slot and is returned in place of the requested packet.
    """
    need = set(from_ids)
    out: list[Packet] = []
    while need:
        pkt = _take_pending(tile, ptype, need)
        if pkt is None and ptype is not PacketType.FIN:
            pkt = _take_pending(tile, PacketType.FIN, need)
        if pkt is None:
            pkt = tile.recv()
            wanted = (pkt.ptype is ptype or pkt.ptype is PacketType.FIN) and pkt.source in need
            if not wanted:
                tile.bank(pkt)
                continue
        out.append(tile.consume(pkt))
        need.discard(pkt.source)
    return out


def shift_pending(tile: Tile, ptype: PacketType) -> Packet | None:
    """Non-blocking: oldest pending packet of that type, or None. RX untouched."""
    pend = tile.pending[ptype]
    if not pend:
        return None
    return tile.consume(pend.pop(0))
