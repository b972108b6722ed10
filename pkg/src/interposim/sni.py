"""Security Network Interfaces: the checker/rewriter at interposer ingress.

Two flavors guard the two kinds of ingress links: SNI-1 on chiplet
links (2-cycle check pipeline) and SNI-2 on memory-controller links
(3-cycle, the third stage covering packet rewriting).  Every verdict is
one of Allow, Rewrite (SNI-2 converting a probe bound for a forbidden
chiplet into a NACK toward the original requester) or Violation, which
halts the whole simulated system with a machine-check.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
import json

from .apu import ApuTable, Permission
from .messages import (
    ADDRESS_LIMIT,
    BROADCAST_ID,
    CoherenceMessage,
    Flit,
    MsgType,
    control_flit_count,
    encode,
    extract_stage,
)
from .topology import Port, Topology

SNI1_LATENCY = 2
SNI2_LATENCY = 3


class ThreatClass(Enum):
    PASSIVE_READING = "passive_reading"
    MASQUERADING = "masquerading"
    MODIFYING = "modifying"
    DIVERTING = "diverting"
    MALFORMED = "malformed"


class SniKind(Enum):
    SNI1 = "sni1"
    SNI2 = "sni2"


class VerdictKind(Enum):
    ALLOW = "allow"
    REWRITE = "rewrite"
    VIOLATION = "violation"


@dataclass(frozen=True)
class SniVerdict:
    outcome: VerdictKind
    threat: ThreatClass | None = None
    detail: str = ""
    replacement: CoherenceMessage | None = None
    new_destination: int | None = None

    @classmethod
    def allow(cls) -> "SniVerdict":
        return cls(VerdictKind.ALLOW)

    @classmethod
    def rewrite(cls, replacement: CoherenceMessage, new_destination: int) -> "SniVerdict":
        return cls(VerdictKind.REWRITE, replacement=replacement, new_destination=new_destination)

    @classmethod
    def violation(cls, threat: ThreatClass, detail: str) -> "SniVerdict":
        return cls(VerdictKind.VIOLATION, threat=threat, detail=detail)


@dataclass(frozen=True)
class SniConfig:
    kind: SniKind
    attached_router: int
    expected_requesters: range
    topo: Topology
    latency_cycles: int | None = None  # non-baseline if overridden
    check_mc_traffic: bool = True

    @property
    def latency(self) -> int:
        if self.latency_cycles is not None:
            return self.latency_cycles
        return SNI1_LATENCY if self.kind is SniKind.SNI1 else SNI2_LATENCY


# Legal (vnet, sender-kind, destination-kind) per message type.  This is
# the static rule table behind the malformed/diverted checks; see
# docs/message_rules.md for the annotated version.
_MC = "mc"
_CORE = "core"
_BCAST = "broadcast"
LEGAL_ROUTES: dict[int, tuple[int, str, str]] = {
    MsgType.GETX: (0, _CORE, _MC),
    MsgType.GETS: (0, _CORE, _MC),
    MsgType.GET_INSTR: (0, _CORE, _MC),
    MsgType.PUT: (0, _CORE, _MC),
    MsgType.MERGED_GETS: (0, _CORE, _MC),
    MsgType.INV: (0, _CORE, _MC),
    MsgType.PROBE: (1, _MC, _BCAST),
    MsgType.PROBE_INV: (1, _MC, _BCAST),
    MsgType.WB_ACK: (1, _MC, _CORE),
    MsgType.WB_NACK: (1, _MC, _CORE),
    MsgType.ACK: (2, _CORE, _CORE),
    MsgType.SHARED_ACK: (2, _CORE, _CORE),
    MsgType.NACK: (2, _MC, _CORE),
    MsgType.DATA: (2, _CORE, _CORE),
    MsgType.DATA_SHARED: (2, _CORE, _CORE),
    MsgType.DATA_EXCLUSIVE: (2, _CORE, _CORE),
    MsgType.MEMORY_DATA: (2, _MC, _CORE),
    MsgType.MEMORY_ACK: (2, _MC, _CORE),
    MsgType.UNBLOCK_ACK: (2, _MC, _CORE),
    MsgType.WRITEBACK_DATA: (2, _CORE, _MC),
    MsgType.UNBLOCK: (3, _CORE, _MC),
    MsgType.UNBLOCKS: (3, _CORE, _MC),
}

# Region-permission floor required of the requester's chiplet, per type.
PERMISSION_REQUIRED: dict[int, Permission] = {
    MsgType.GETS: Permission.READ_ONLY,
    MsgType.GET_INSTR: Permission.READ_ONLY,
    MsgType.GETX: Permission.READ_WRITE,
    MsgType.PUT: Permission.READ_WRITE,
    MsgType.WRITEBACK_DATA: Permission.READ_WRITE,
}

# Data-carrying responses addressed to cores: the destination chiplet
# must hold at least read permission on the referenced region.
_DATA_TO_CORE = frozenset(
    {MsgType.DATA, MsgType.DATA_SHARED, MsgType.DATA_EXCLUSIVE, MsgType.MEMORY_DATA}
)


def pcm_check(msg, cfg: SniConfig, table: ApuTable) -> SniVerdict:
    """Full packet check; every input yields a verdict.

    ``msg`` needs the header fields only (a CoherenceMessage or a
    PartialHeader with the address populated).
    """
    topo = cfg.topo

    # (a) requester identity
    if msg.requester_id not in cfg.expected_requesters:
        return SniVerdict.violation(
            ThreatClass.MASQUERADING,
            f"requester {msg.requester_id} outside expected range "
            f"{cfg.expected_requesters.start}-{cfg.expected_requesters.stop - 1}",
        )

    # (b) type/vnet legality and (e) address range
    rule = LEGAL_ROUTES.get(msg.msg_type)
    if rule is None:
        return SniVerdict.violation(
            ThreatClass.MALFORMED, f"undefined message type code {int(msg.msg_type)}"
        )
    vnet, sender_kind, dest_kind = rule
    if msg.vnet != vnet:
        return SniVerdict.violation(
            ThreatClass.MALFORMED,
            f"{MsgType(msg.msg_type).name} illegal on vnet {msg.vnet}",
        )
    requester_is_core = topo.is_core(msg.requester_id)
    if sender_kind == _CORE and not requester_is_core:
        return SniVerdict.violation(
            ThreatClass.MALFORMED,
            f"{MsgType(msg.msg_type).name} must originate from a core",
        )
    if sender_kind == _MC and not topo.is_mc(msg.requester_id):
        return SniVerdict.violation(
            ThreatClass.MALFORMED,
            f"{MsgType(msg.msg_type).name} must originate from a memory controller",
        )
    if msg.address is None:
        return SniVerdict.violation(ThreatClass.MALFORMED, "address missing")
    if not 0 <= msg.address < min(ADDRESS_LIMIT, table.address_limit):
        return SniVerdict.violation(
            ThreatClass.MALFORMED, f"address {msg.address:#x} out of range"
        )

    region, entry = table.lookup(msg.address)

    # (c) destination legality
    if dest_kind == _MC:
        dest_ok = topo.is_mc(msg.destination_id)
    elif dest_kind == _CORE:
        dest_ok = topo.is_core(msg.destination_id)
    else:
        dest_ok = msg.destination_id == BROADCAST_ID
    if not dest_ok:
        return SniVerdict.violation(
            ThreatClass.DIVERTING,
            f"destination {msg.destination_id} illegal for {MsgType(msg.msg_type).name}",
        )
    if msg.msg_type in _DATA_TO_CORE:
        dest_chiplet = topo.chiplet_of_core(msg.destination_id)
        if not entry.permission_of(dest_chiplet).allows_read:
            return SniVerdict.violation(
                ThreatClass.DIVERTING,
                f"data diverted to chiplet {dest_chiplet} without access to region {region}",
            )

    # (d) region permission of the requester's chiplet
    required = PERMISSION_REQUIRED.get(msg.msg_type)
    if required is not None and requester_is_core:
        chiplet = topo.chiplet_of_core(msg.requester_id)
        if not entry.permission_of(chiplet).covers(required):
            threat = (
                ThreatClass.PASSIVE_READING
                if required is Permission.READ_ONLY
                else ThreatClass.MODIFYING
            )
            return SniVerdict.violation(
                threat,
                f"{MsgType(msg.msg_type).name} from chiplet {chiplet} lacking "
                f"{required.name} on region {region}",
            )

    return SniVerdict.allow()


def sni2_filter(msg, target_chiplet: int, cfg: SniConfig, table: ApuTable) -> SniVerdict:
    """Broadcast snooping filter: probe copies toward no-access chiplets
    become NACKs sent straight back to the original requester."""
    if msg.msg_type not in (MsgType.PROBE, MsgType.PROBE_INV):
        return SniVerdict.allow()
    _, entry = table.lookup(msg.address)
    if entry.permission_of(target_chiplet) is not Permission.NO_ACCESS:
        return SniVerdict.allow()
    original_requester = msg.cur_owner
    replacement = CoherenceMessage(
        msg_type=MsgType.NACK,
        requester_id=cfg.topo.rep_core(target_chiplet),
        destination_id=original_requester,
        vnet=2,
        address=msg.address,
    )
    return SniVerdict.rewrite(replacement, original_requester)


@dataclass(frozen=True)
class ViolationRecord:
    """One line of the violation log (any verdict other than Allow)."""

    cycle: int
    router: int
    port: str
    sni_kind: str
    threat: ThreatClass
    detail: str
    message: str
    packet_id: int

    def sort_key(self) -> tuple:
        return (self.router, self.port, self.packet_id)

    def to_json(self) -> str:
        return json.dumps(
            {
                "cycle": self.cycle,
                "router": self.router,
                "port": self.port,
                "sni": self.sni_kind,
                "threat": self.threat.value,
                "detail": self.detail,
                "message": self.message,
                "packet_id": self.packet_id,
            },
            sort_keys=True,
        )


class _Progress:
    __slots__ = (
        "packet", "flits", "arrived", "forwarded", "verdict",
        "final_header_cycle", "release_cycle", "rewritten", "total",
    )

    def __init__(self, packet, total: int):
        self.packet = packet
        self.flits: list[Flit] = []
        self.arrived = 0
        self.forwarded = 0
        self.verdict: SniVerdict | None = None
        self.final_header_cycle = -1
        self.release_cycle = -1
        self.rewritten = False
        self.total = total


@dataclass
class SniStats:
    checked: int = 0
    allowed: int = 0
    violations: int = 0
    rewrites: int = 0
    filtered_per_chiplet: dict = field(default_factory=dict)


class SniUnit:
    """One SNI instance: a sequential pipeline driven by the interposer clock.

    Flits are pushed in link order (at most one per interposer cycle);
    the packet's head is released exactly ``latency`` cycles after its
    final header flit arrives, then flits stream out one per cycle into
    the attached router.  When disabled the unit is a zero-delay wire.
    """

    def __init__(
        self,
        cfg: SniConfig,
        width: int,
        table_getter,
        forward,
        spawn_packet=None,
        enabled: bool = True,
        rewrite_enabled: bool = True,
        input_capacity: int = 24,
    ):
        self.cfg = cfg
        self.width = width
        self.table_getter = table_getter
        self.forward = forward
        self.spawn_packet = spawn_packet
        self.enabled = enabled
        self.rewrite_enabled = rewrite_enabled
        self.capacity = input_capacity
        self.header_flits = control_flit_count(width)
        self.inflight: deque[_Progress] = deque()
        self.held = 0
        self.stats = SniStats()
        self._poisoned: set[int] = set()

    def can_accept(self) -> bool:
        return self.held < self.capacity

    def push(self, flit: Flit, packet, cycle: int) -> None:
        if packet.pid in self._poisoned:
            return
        if not self.inflight or self.inflight[-1].packet.pid != packet.pid:
            self.inflight.append(_Progress(packet, packet.flit_total))
        entry = self.inflight[-1]
        entry.flits.append(flit)
        entry.arrived += 1
        self.held += 1
        flit.ingress_tick = cycle
        if entry.arrived == self.header_flits:
            entry.final_header_cycle = cycle
            entry.verdict = self._judge(entry)
            latency = self.cfg.latency if self.enabled else 0
            entry.release_cycle = cycle + latency

    def _judge(self, entry: _Progress) -> SniVerdict:
        if not self.enabled:
            return SniVerdict.allow()
        self.stats.checked += 1
        fields = extract_stage(entry.flits, self.width, min(2, self.header_flits))
        packet = entry.packet
        if self.cfg.kind is SniKind.SNI2 and packet.target_chiplet is not None:
            verdict = SniVerdict.allow()
            if self.cfg.check_mc_traffic:
                verdict = pcm_check(fields, self.cfg, self.table_getter())
            if verdict.outcome is VerdictKind.ALLOW and self.rewrite_enabled:
                verdict = sni2_filter(
                    fields, packet.target_chiplet, self.cfg, self.table_getter()
                )
        else:
            verdict = pcm_check(fields, self.cfg, self.table_getter())
        if verdict.outcome is VerdictKind.ALLOW:
            self.stats.allowed += 1
        return verdict

    def _apply_rewrite(self, entry: _Progress, cycle: int) -> None:
        verdict = entry.verdict
        self.stats.rewrites += 1
        chiplet = entry.packet.target_chiplet
        per = self.stats.filtered_per_chiplet
        per[chiplet] = per.get(chiplet, 0) + 1
        self.held -= entry.arrived
        entry.packet.dropped = True
        new_packet = self.spawn_packet(
            verdict.replacement, verdict.replacement.requester_id,
            verdict.new_destination, cycle,
        )
        flits = encode(verdict.replacement, self.width, new_packet.pid)
        new_packet.flits = flits
        entry.packet = new_packet
        entry.flits = flits
        entry.arrived = len(flits)
        entry.total = len(flits)
        entry.forwarded = 0
        self.held += len(flits)
        entry.rewritten = True

    def step(self, cycle: int) -> list[ViolationRecord]:
        """Advance one interposer cycle; at most one flit leaves the unit."""
        violations: list[ViolationRecord] = []
        while self.inflight:
            entry = self.inflight[0]
            if entry.verdict is None or cycle < entry.release_cycle:
                break
            if entry.verdict.outcome is VerdictKind.VIOLATION:
                fields = extract_stage(entry.flits, self.width, min(2, self.header_flits))
                violations.append(
                    ViolationRecord(
                        cycle=entry.release_cycle,
                        router=self.cfg.attached_router,
                        port=Port.LOCAL.value,
                        sni_kind=self.cfg.kind.value,
                        threat=entry.verdict.threat,
                        detail=entry.verdict.detail,
                        message=_render_fields(fields),
                        packet_id=entry.packet.pid,
                    )
                )
                self.stats.violations += 1
                self.held -= entry.arrived
                entry.packet.dropped = True
                self._poisoned.add(entry.packet.pid)
                self.inflight.popleft()
                continue
            if entry.verdict.outcome is VerdictKind.REWRITE and not entry.rewritten:
                self._apply_rewrite(entry, cycle)
            if entry.forwarded < len(entry.flits):
                flit = entry.flits[entry.forwarded]
                if self.forward(flit, entry.packet):
                    flit.egress_tick = cycle
                    if entry.forwarded == 0:
                        entry.packet.sni_delay = cycle - entry.final_header_cycle
                        entry.packet.sni_kind = self.cfg.kind.value
                    entry.forwarded += 1
                    self.held -= 1
                    if entry.forwarded == entry.total:
                        self.inflight.popleft()
            break
        return violations


def _render_fields(fields) -> str:
    msg_type = fields.msg_type
    try:
        name = MsgType(msg_type).name
    except ValueError:
        name = f"UNDEFINED_{msg_type}"
    addr = f"{fields.address:#x}" if fields.address is not None else "?"
    return (
        f"{name} req={fields.requester_id} dst={fields.destination_id}"
        f" vnet={fields.vnet} addr={addr} owner={fields.cur_owner}"
        f" dirty={int(fields.dirty)}"
    )
