"""Flit-level network model: chiplet hubs, boundary links, interposer mesh.

Two clock domains share one global tick counter: chiplet-side components
step every tick, interposer-side components every fourth tick (a 4:1
frequency ratio).  Chiplet links are 128 bits wide; interposer links are
64 or 128 bits, so the boundary re-slices flits between widths.  Every
ingress link into the interposer passes through an SNI; router-to-router
links inside the mesh do not.

Routers implement wormhole switching with dimension-order (XY) routing,
four virtual networks and a configurable number of virtual channels per
vnet.  Each output port grants at most one flit per cycle and stays
locked to a packet from head to tail, so flits of different packets
never interleave on a link.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .messages import CoherenceMessage, Flit, FlitPosition, encode
from .sni import SniUnit
from .topology import Port, Topology, TopologyError

CHIPLET_LINK_BITS = 128
CLOCK_RATIO = 4  # interposer period in chiplet ticks (1 GHz vs 250 MHz)

_PORT_ORDER = (Port.EAST, Port.WEST, Port.NORTH, Port.SOUTH, Port.LOCAL)
_PORT_IDX = {p: i for i, p in enumerate(_PORT_ORDER)}
_LOCAL_IDX = _PORT_IDX[Port.LOCAL]
_OPP_IDX = (1, 0, 3, 2, 4)  # paired input port seen by the neighbor


class Packet:
    """One message in flight, with its flits and latency bookkeeping.

    Timestamps are global ticks.  ``flits`` holds the interposer-width
    encoding, ``flits128`` the chiplet-link encoding of core-sourced
    packets (identical payload bits, re-sliced).
    """

    __slots__ = (
        "pid", "msg", "src_node", "dest_node", "target_chiplet", "vnet",
        "vc", "dest_router", "flits", "flits128", "flit_total",
        "sent128", "sent_iw", "inject_tick", "first_grant_tick",
        "deliver_tick", "hops", "sni_delay", "sni_kind", "dropped",
        "malicious", "loopback",
    )

    def __init__(
        self,
        pid: int,
        msg: CoherenceMessage,
        src_node: int,
        dest_node: int,
        dest_router: int,
        target_chiplet: int | None = None,
    ):
        self.pid = pid
        self.msg = msg
        self.src_node = src_node
        self.dest_node = dest_node
        self.target_chiplet = target_chiplet
        self.vnet = msg.vnet
        self.vc: int | None = None
        self.dest_router = dest_router
        self.flits: list[Flit] = []
        self.flits128: list[Flit] = []
        self.flit_total = 0
        self.sent128 = 0
        self.sent_iw = 0
        self.inject_tick = -1
        self.first_grant_tick = -1
        self.deliver_tick = -1
        self.hops = 0
        self.sni_delay = -1
        self.sni_kind: str | None = None
        self.dropped = False
        self.malicious = False
        self.loopback = False


class Router:
    """One mesh router: input-buffered, per-output wormhole arbitration.

    Ports are integer indices (E, W, N, S, LOCAL = 0..4) in the hot
    path; a per-destination routing table is precomputed when the mesh
    is wired up.
    """

    def __init__(self, rid: int, topo: Topology, vc_per_vnet: int, vc_depth: int):
        self.id = rid
        self.topo = topo
        self.vc_per_vnet = vc_per_vnet
        self.vc_depth = vc_depth
        self.buffers: dict[tuple[int, int, int], deque] = {}
        self.occupied: set[tuple[int, int, int]] = set()
        self.locks: list = [None] * 5
        self.last_grant: list = [None] * 5
        self.neighbors: list = [None] * 5  # Router per out-port index
        self.route_table: dict[int, int] = {}  # dest router id -> out-port idx
        self.local_sink = None  # sink(flit, packet, tick) -> bool
        self.trace = None  # trace(tick, packet, flit, link_label) or None

    def finish_wiring(self) -> None:
        """Precompute the XY routing decision for every destination."""
        for dest in self.topo.all_routers():
            if dest == self.id:
                self.route_table[dest] = _LOCAL_IDX
            else:
                self.route_table[dest] = _PORT_IDX[self.topo.route(self.id, dest)]

    def accept(self, port_idx: int, vnet: int, vc: int, flit: Flit, packet, tick: int) -> bool:
        key = (port_idx, vnet, vc)
        q = self.buffers.get(key)
        if q is None:
            q = self.buffers[key] = deque()
        if len(q) >= self.vc_depth:
            return False
        q.append((flit, packet))
        flit.stamp = tick
        self.occupied.add(key)
        return True

    def _try_send(self, out: int, key: tuple[int, int, int], tick: int) -> bool:
        q = self.buffers[key]
        flit, packet = q[0]
        if out == _LOCAL_IDX:
            ok = self.local_sink(flit, packet, tick)
        else:
            nb = self.neighbors[out]
            ok = nb.accept(_OPP_IDX[out], key[1], key[2], flit, packet, tick)
        if not ok:
            return False
        q.popleft()
        if not q:
            self.occupied.discard(key)
        if flit.is_head:
            packet.hops += 1
        if self.trace is not None:
            label = (
                f"{self.id}->local" if out == _LOCAL_IDX
                else f"{self.id}->{self.neighbors[out].id}"
            )
            self.trace(tick, packet, flit, label)
        if flit.is_tail:
            self.locks[out] = None
        elif flit.is_head:
            self.locks[out] = key
        return True

    def step(self, tick: int) -> bool:
        if not self.occupied:
            return False
        moved = False
        heads: list[list] = [None] * 5
        route = self.route_table
        buffers = self.buffers
        for key in sorted(self.occupied):
            flit, packet = buffers[key][0]
            if flit.stamp >= tick or not flit.is_head:
                continue
            out = route[packet.dest_router]
            if heads[out] is None:
                heads[out] = [key]
            else:
                heads[out].append(key)
        for out in range(5):
            lock = self.locks[out]
            if lock is not None:
                if lock not in self.occupied:
                    continue  # rest of the worm still upstream
                flit, _ = buffers[lock][0]
                if flit.stamp >= tick:
                    continue
                if self._try_send(out, lock, tick):
                    moved = True
                continue
            cands = heads[out]
            if not cands:
                continue
            # Round-robin: first candidate strictly after the last grant,
            # wrapping to the smallest.
            last = self.last_grant[out]
            pick = None
            if last is not None:
                for key in cands:
                    if key > last:
                        pick = key
                        break
            if pick is None:
                pick = cands[0]
            if self._try_send(out, pick, tick):
                self.last_grant[out] = pick
                moved = True
        return moved


class ChipletBoundary:
    """Outbound side of one chiplet link: hub flits re-sliced into the
    interposer width and fed into the chiplet's SNI-1, one flit per
    interposer cycle."""

    def __init__(self, chiplet: int, interposer_width: int, sni: SniUnit, egress_cap: int):
        self.chiplet = chiplet
        self.iw = interposer_width
        self.ratio = CHIPLET_LINK_BITS // interposer_width
        self.sni = sni
        self.egress_cap = egress_cap
        self.egress: deque[tuple[Flit, Packet]] = deque()
        self.pending: deque[tuple[Flit, Packet]] = deque()

    def egress_space(self) -> bool:
        return len(self.egress) < self.egress_cap

    def push_egress(self, flit: Flit, packet: Packet, tick: int) -> None:
        flit.stamp = tick
        self.egress.append((flit, packet))

    def step(self, icycle: int, tick: int) -> bool:
        moved = False
        if not self.pending and self.egress:
            flit128, packet = self.egress[0]
            if flit128.stamp < tick:
                self.egress.popleft()
                idx = packet.sent_iw
                for piece in packet.flits[idx:idx + self.ratio]:
                    piece.injection_tick = flit128.injection_tick
                    self.pending.append((piece, packet))
                packet.sent_iw = idx + self.ratio
                moved = True
        if self.pending and self.sni.can_accept():
            flit, packet = self.pending.popleft()
            self.sni.push(flit, packet, icycle)
            moved = True
        return moved


class ChipletIngress:
    """Inbound side of one chiplet link: merges interposer-width pieces
    back into 128-bit flits for the hub.  Wormhole locking on the
    router's local port guarantees pieces of one packet arrive
    contiguously."""

    def __init__(self, chiplet: int, interposer_width: int, hub: "ChipletHub"):
        self.chiplet = chiplet
        self.iw = interposer_width
        self.ratio = CHIPLET_LINK_BITS // interposer_width
        self.hub = hub
        self.acc: list[Flit] = []
        self.count128 = 0

    def sink(self, flit: Flit, packet: Packet, tick: int) -> bool:
        self.acc.append(flit)
        if len(self.acc) < self.ratio:
            return True
        payload = 0
        for i, piece in enumerate(self.acc):
            payload |= piece.payload << (i * self.iw)
        head = self.count128 == 0
        tail = self.acc[-1].is_tail
        if head and tail:
            position = FlitPosition.HEAD_TAIL
        elif head:
            position = FlitPosition.HEAD
        elif tail:
            position = FlitPosition.TAIL
        else:
            position = FlitPosition.BODY
        flit128 = Flit(
            payload=payload,
            width=CHIPLET_LINK_BITS,
            position=position,
            packet_id=packet.pid,
            injection_tick=self.acc[0].injection_tick,
        )
        flit128.stamp = tick
        self.acc = []
        self.count128 = 0 if tail else self.count128 + 1
        self.hub.ingress.append((flit128, packet))
        return True


class ChipletHub:
    """On-chiplet hub router, collapsed to the boundary-relevant part:
    per-core injection queues arbitrated onto the single chiplet link,
    plus the ingress stream delivering one 128-bit flit per tick."""

    def __init__(self, chiplet: int, topo: Topology, deliver):
        self.chiplet = chiplet
        self.topo = topo
        self.deliver = deliver  # deliver(chiplet, packet, tick)
        self.core_ids = list(topo.core_range(chiplet))
        self.queues: dict[int, deque[Packet]] = {c: deque() for c in self.core_ids}
        self.ingress: deque[tuple[Flit, Packet]] = deque()
        self.boundary: ChipletBoundary | None = None
        self.lock: int | None = None
        self.last_grant = -1
        self.backlog = 0  # queued packets across all cores

    def enqueue(self, packet: Packet) -> None:
        self.queues[packet.src_node].append(packet)
        self.backlog += 1

    def _pick_source(self) -> int | None:
        if self.lock is not None:
            return self.lock
        cands = [c for c in self.core_ids if self.queues[c]]
        if not cands:
            return None
        for c in cands:
            if c > self.last_grant:
                return c
        return cands[0]

    def step(self, tick: int) -> bool:
        moved = False
        if self.ingress:
            flit, packet = self.ingress[0]
            if flit.stamp < tick:
                self.ingress.popleft()
                moved = True
                if flit.is_tail:
                    packet.deliver_tick = tick
                    self.deliver(self.chiplet, packet, tick)
        src = self._pick_source()
        if src is not None:
            packet = self.queues[src][0]
            dest_local = (
                packet.target_chiplet is None
                and self.topo.is_core(packet.dest_node)
                and self.topo.chiplet_of_core(packet.dest_node) == self.chiplet
            )
            can_move = dest_local or self.boundary.egress_space()
            flit = packet.flits128[packet.sent128]
            if can_move:
                if packet.sent128 == 0:
                    packet.loopback = dest_local
                    if dest_local:
                        # Loopback never reaches the mesh: the hub grant
                        # is its first (and only) link grant.
                        packet.first_grant_tick = tick
                flit.injection_tick = packet.inject_tick
                if dest_local:
                    flit.stamp = tick
                    self.ingress.append((flit, packet))
                else:
                    self.boundary.push_egress(flit, packet, tick)
                packet.sent128 += 1
                moved = True
                if flit.is_tail:
                    self.lock = None
                    self.last_grant = src
                    self.queues[src].popleft()
                    self.backlog -= 1
                else:
                    self.lock = src
        return moved


class McNi:
    """Memory-controller network interface: native interposer width on
    both directions, egress through the controller's SNI-2."""

    def __init__(self, mc: int, sni: SniUnit, deliver):
        self.mc = mc
        self.sni = sni
        self.deliver = deliver  # deliver(mc, packet, tick)
        self.queue: deque[Packet] = deque()

    def enqueue(self, packet: Packet) -> None:
        self.queue.append(packet)

    def step_egress(self, icycle: int, tick: int) -> bool:
        if not self.queue or not self.sni.can_accept():
            return False
        packet = self.queue[0]
        flit = packet.flits[packet.sent_iw]
        flit.injection_tick = packet.inject_tick
        self.sni.push(flit, packet, icycle)
        packet.sent_iw += 1
        if packet.sent_iw == len(packet.flits):
            self.queue.popleft()
        return True

    def sink(self, flit: Flit, packet: Packet, tick: int) -> bool:
        if flit.is_tail:
            packet.deliver_tick = tick
            self.deliver(self.mc, packet, tick)
        return True


@dataclass
class FabricCounters:
    injected: int = 0
    delivered: int = 0


class Fabric:
    """The assembled interconnect: routers, boundaries, NIs and SNIs.

    The harness owns the clock; call step_interposer on every fourth
    tick (before step_chiplets for the same tick) and step_chiplets on
    every tick.
    """

    def __init__(
        self,
        topo: Topology,
        interposer_width: int,
        vc_per_vnet: int,
        vc_depth: int,
        sni_factory,
        deliver_chiplet,
        deliver_mc,
        egress_cap: int = 2,
        enable_trace: bool = False,
    ):
        """sni_factory(kind, router_id, index, forward, spawn) -> SniUnit."""
        self.topo = topo
        self.iw = interposer_width
        self.vc_per_vnet = vc_per_vnet
        self.counters = FabricCounters()
        self.registry: list[Packet] = []
        self.trace_events: list[tuple[int, int, str]] | None = (
            [] if enable_trace else None
        )
        self._tick = 0
        self._next_pid = 0
        self._vc_rr: dict[tuple[int, int], int] = {}

        self.routers = {
            rid: Router(rid, topo, vc_per_vnet, vc_depth)
            for rid in topo.all_routers()
        }
        for rid, router in self.routers.items():
            for port in (Port.EAST, Port.WEST, Port.NORTH, Port.SOUTH):
                try:
                    router.neighbors[_PORT_IDX[port]] = self.routers[
                        topo.neighbor(rid, port)
                    ]
                except TopologyError:
                    continue
            router.finish_wiring()
            if enable_trace:
                router.trace = self._trace

        self.hubs: dict[int, ChipletHub] = {}
        self.boundaries: dict[int, ChipletBoundary] = {}
        self.chiplet_snis: dict[int, SniUnit] = {}
        for k in range(topo.n_chiplets):
            rid = topo.chiplet_router(k)
            hub = ChipletHub(k, topo, deliver_chiplet)
            sni = sni_factory("sni1", rid, k, self._make_forward(rid), self._spawn)
            boundary = ChipletBoundary(k, interposer_width, sni, egress_cap)
            hub.boundary = boundary
            self.routers[rid].local_sink = ChipletIngress(k, interposer_width, hub).sink
            self.hubs[k] = hub
            self.boundaries[k] = boundary
            self.chiplet_snis[k] = sni

        self.mc_nis: dict[int, McNi] = {}
        self.mc_snis: dict[int, SniUnit] = {}
        for m in range(topo.n_mcs):
            rid = topo.mc_router(m)
            sni = sni_factory("sni2", rid, m, self._make_forward(rid), self._spawn)
            ni = McNi(m, sni, deliver_mc)
            self.routers[rid].local_sink = ni.sink
            self.mc_nis[m] = ni
            self.mc_snis[m] = sni

        self._routers_order = [self.routers[r] for r in sorted(self.routers)]
        self._boundary_order = [self.boundaries[k] for k in sorted(self.boundaries)]
        self._mc_ni_order = [self.mc_nis[m] for m in sorted(self.mc_nis)]
        self._sni_order = [
            self.chiplet_snis[k] for k in sorted(self.chiplet_snis)
        ] + [self.mc_snis[m] for m in sorted(self.mc_snis)]
        self._hub_order = [self.hubs[k] for k in sorted(self.hubs)]

    # -- packet lifecycle -------------------------------------------------

    def new_packet(
        self,
        msg: CoherenceMessage,
        src_node: int,
        dest_node: int,
        tick: int,
        target_chiplet: int | None = None,
        malicious: bool = False,
    ) -> Packet:
        pid = self._next_pid
        self._next_pid += 1
        dest_router = self.topo.dest_router(dest_node, target_chiplet)
        packet = Packet(pid, msg, src_node, dest_node, dest_router, target_chiplet)
        packet.inject_tick = tick
        packet.malicious = malicious
        packet.flits = encode(msg, self.iw, pid)
        packet.flit_total = len(packet.flits)
        self.registry.append(packet)
        self.counters.injected += 1
        return packet

    def inject_from_core(
        self, msg: CoherenceMessage, tick: int, malicious: bool = False
    ) -> Packet:
        packet = self.new_packet(
            msg, msg.requester_id, msg.destination_id, tick, malicious=malicious
        )
        packet.flits128 = encode(msg, CHIPLET_LINK_BITS, packet.pid)
        chiplet = self.topo.chiplet_of_core(msg.requester_id)
        self.hubs[chiplet].enqueue(packet)
        return packet

    def inject_from_core_as(
        self, msg: CoherenceMessage, src_core: int, tick: int, malicious: bool = True
    ) -> Packet:
        """Inject on a chosen core's link regardless of the claimed
        requester: the spoofing/attack entry point."""
        try:
            self.topo.dest_router(msg.destination_id)
            dest = msg.destination_id
        except TopologyError:
            # Unroutable destination (broadcast id or junk): the packet
            # still heads onto the interposer and meets the link's SNI.
            dest = self.topo.mc_node(0)
        packet = self.new_packet(msg, src_core, dest, tick, malicious=malicious)
        packet.flits128 = encode(msg, CHIPLET_LINK_BITS, packet.pid)
        self.hubs[self.topo.chiplet_of_core(src_core)].enqueue(packet)
        return packet

    def inject_from_mc(
        self, msg: CoherenceMessage, mc: int, tick: int, target_chiplet: int | None = None
    ) -> Packet:
        packet = self.new_packet(
            msg, self.topo.mc_node(mc), msg.destination_id, tick,
            target_chiplet=target_chiplet,
        )
        self.mc_nis[mc].enqueue(packet)
        return packet

    def _spawn(self, msg: CoherenceMessage, src_node: int, dest_node: int, icycle: int) -> Packet:
        tick = icycle * CLOCK_RATIO
        packet = self.new_packet(msg, src_node, dest_node, tick)
        packet.first_grant_tick = tick
        return packet

    # -- wiring helpers ---------------------------------------------------

    def _make_forward(self, router_id: int):
        router = self.routers[router_id]

        def forward(flit: Flit, packet: Packet) -> bool:
            if packet.vc is None:
                key = (router_id, packet.vnet)
                rr = self._vc_rr.get(key, 0)
                packet.vc = rr
                self._vc_rr[key] = (rr + 1) % self.vc_per_vnet
            ok = router.accept(
                _LOCAL_IDX, packet.vnet, packet.vc, flit, packet, self._tick
            )
            if ok:
                if flit.is_head:
                    packet.hops += 1
                    if packet.first_grant_tick < 0:
                        # Queuing ends when the head is granted onto the
                        # first mesh router; the checker pipeline before
                        # this point counts as queuing.
                        packet.first_grant_tick = self._tick
                if self.trace_events is not None:
                    self.trace_events.append(
                        (self._tick, packet.pid, f"sni->{router_id}")
                    )
            return ok

        return forward

    def _trace(self, tick: int, packet: Packet, flit: Flit, label: str) -> None:
        self.trace_events.append((tick, packet.pid, label))

    # -- clocking ---------------------------------------------------------

    def step_interposer(self, tick: int):
        """One interposer cycle; returns (violations, progressed)."""
        self._tick = tick
        icycle = tick // CLOCK_RATIO
        moved = False
        violations = []
        for boundary in self._boundary_order:
            if boundary.egress or boundary.pending:
                moved |= boundary.step(icycle, tick)
        for ni in self._mc_ni_order:
            if ni.queue:
                moved |= ni.step_egress(icycle, tick)
        for sni in self._sni_order:
            if sni.inflight:
                violations.extend(sni.step(icycle))
        for router in self._routers_order:
            if router.occupied:
                moved |= router.step(tick)
        return violations, moved

    def step_chiplets(self, tick: int) -> bool:
        moved = False
        for hub in self._hub_order:
            if hub.ingress or hub.backlog:
                moved |= hub.step(tick)
        return moved

    # -- accounting -------------------------------------------------------

    def undelivered(self) -> list[Packet]:
        return [
            p for p in self.registry if p.deliver_tick < 0 and not p.dropped
        ]

    def ledger(self) -> dict:
        delivered = dropped = in_flight = flits_in = flits_out = 0
        for p in self.registry:
            flits_in += p.flit_total
            if p.dropped:
                dropped += 1
            elif p.deliver_tick >= 0:
                delivered += 1
                flits_out += p.flit_total
            else:
                in_flight += 1
        return {
            "packets_injected": len(self.registry),
            "packets_delivered": delivered,
            "packets_dropped": dropped,
            "packets_in_flight": in_flight,
            "flits_injected": flits_in,
            "flits_delivered": flits_out,
            "balanced": delivered + dropped + in_flight == len(self.registry),
        }
