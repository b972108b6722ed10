"""Simulation harness: configuration, the main loop, and run reports.

One Simulator owns the whole system: the interconnect fabric, per-core
protocol engines, home-node directories, DRAM and the verification
machinery (memory oracle plus single-writer census).  The loop advances
a single global tick counter; interposer-side components run every
fourth tick, chiplet-side components every tick, always in fixed order,
so a (config, seed) pair reproduces byte-identical reports.

Exit codes: 0 completed, 2 security halt (machine-check), 3 deadlock or
exhausted cycle budget, 64 invalid configuration.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

from .apu import ApuTable, Permission
from .attacks import AttackScenario
from .coherence import (
    ChipletAgent,
    Core,
    Directory,
    Dram,
    MemoryOracle,
    PrivateCache,
    SwmrChecker,
)
from .messages import LINK_WIDTHS, MsgType
from .noc import CLOCK_RATIO, Fabric, Packet
from .sni import SniConfig, SniKind, SniUnit
from .topology import Topology
from . import workloads
from .workloads import WorkloadSpec

EXIT_OK = 0
EXIT_SECURITY = 2
EXIT_DEADLOCK = 3
EXIT_CONFIG = 64

VC_CHOICES = (4, 6, 8, 10)

REPORT_SCHEMA = "interposim-report-v1"


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Everything that defines one simulation run."""

    n_chiplets: int = 8
    cores_per_chiplet: int = 8
    n_mcs: int = 4
    interposer_width: int = 128
    vc_per_vnet: int = 4
    vc_depth: int = 4
    sni_enabled: bool = True
    sni2_rewrite: bool = True
    check_mc_traffic: bool = True
    permissions: ApuTable | None = None  # None means READ_WRITE everywhere
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    attacks: tuple[AttackScenario, ...] = ()
    # (icycle, region, chiplet, Permission) applied via the privileged channel
    permission_updates: tuple[tuple[int, int, int, Permission], ...] = ()
    seed: int = 0
    max_ticks: int = 4_000_000
    watchdog_icycles: int = 50_000
    dram_latency: int = 100
    retry_backoff_icycles: int = 20
    cache_lines: int = 256
    sni_input_capacity: int = 24
    boundary_egress_cap: int = 2
    collect_delivery_log: bool = False
    enable_trace: bool = False
    label: str = "run"

    def validate(self) -> list[str]:
        errors = []
        if self.interposer_width not in LINK_WIDTHS:
            errors.append(
                f"interposer_width must be one of {LINK_WIDTHS}, "
                f"got {self.interposer_width}"
            )
        if self.vc_per_vnet not in VC_CHOICES:
            errors.append(f"vc_per_vnet must be one of {VC_CHOICES}")
        if self.vc_depth < 1:
            errors.append("vc_depth must be >= 1")
        try:
            topo = Topology(self.n_chiplets, self.cores_per_chiplet, self.n_mcs)
        except Exception as exc:
            errors.append(str(exc))
            return errors
        errors.extend(self.workload.validate(topo))
        if self.cache_lines < 2:
            errors.append("cache_lines must be >= 2 (one line plus a victim slot)")
        if self.dram_latency < 1:
            errors.append("dram_latency must be >= 1")
        if self.watchdog_icycles < 100:
            errors.append("watchdog_icycles must be >= 100")
        if self.max_ticks < 1:
            errors.append("max_ticks must be >= 1")
        for icycle, region, chiplet, perm in self.permission_updates:
            table = self.permissions
            n_regions = table.n_regions if table else 64
            if not 0 <= region < n_regions:
                errors.append(f"permission update region {region} out of range")
            if not 0 <= chiplet < 8:
                errors.append(f"permission update chiplet {chiplet} out of range")
            if not isinstance(perm, Permission):
                errors.append(f"permission update value {perm!r} invalid")
            if icycle < 0:
                errors.append("permission update cycle must be >= 0")
        for scenario in self.attacks:
            if not topo.is_core(scenario.src_core):
                errors.append(f"attack {scenario.name}: no core {scenario.src_core}")
        return errors

    def topology(self) -> Topology:
        return Topology(self.n_chiplets, self.cores_per_chiplet, self.n_mcs)

    def describe(self) -> dict:
        """JSON-safe echo of the configuration for the report."""
        table = self.permissions
        return {
            "label": self.label,
            "n_chiplets": self.n_chiplets,
            "cores_per_chiplet": self.cores_per_chiplet,
            "n_mcs": self.n_mcs,
            "interposer_width": self.interposer_width,
            "vc_per_vnet": self.vc_per_vnet,
            "vc_depth": self.vc_depth,
            "sni_enabled": self.sni_enabled,
            "sni2_rewrite": self.sni2_rewrite,
            "check_mc_traffic": self.check_mc_traffic,
            "permissions": table.serialize().hex() if table else None,
            "workload": {
                "kind": self.workload.kind,
                "ops_per_core": self.workload.ops_per_core,
                "read_fraction": self.workload.read_fraction,
                "footprint_lines": self.workload.footprint_lines,
                "mean_gap_ticks": self.workload.mean_gap_ticks,
                "hot_mc": self.workload.hot_mc,
                "shared_lines": self.workload.shared_lines,
                "active_cores": list(self.workload.active_cores)
                if self.workload.active_cores is not None else None,
                "trace_path": self.workload.trace_path,
            },
            "attacks": [s.name for s in self.attacks],
            "seed": self.seed,
            "dram_latency": self.dram_latency,
            "retry_backoff_icycles": self.retry_backoff_icycles,
            "cache_lines": self.cache_lines,
        }


def percentile(sorted_values: list[int], fraction: float) -> int:
    """Nearest-rank percentile over pre-sorted values."""
    if not sorted_values:
        return 0
    rank = max(1, math.ceil(len(sorted_values) * fraction))
    rank = min(rank, len(sorted_values))
    return sorted_values[rank - 1]


def collect_latency(packets: list[Packet], include_loopback: bool = False) -> dict:
    """Aggregate the exact latency decomposition over delivered packets.

    queuing (injection until the head is granted onto the first mesh
    router, which includes any checker pipeline) + in_network (mesh
    grant to tail delivery) = total, per packet and therefore in the
    means.
    """
    queuing = in_network = total = hops = 0
    totals = []
    for p in packets:
        if p.deliver_tick < 0 or p.dropped:
            continue
        if p.loopback and not include_loopback:
            continue
        q = p.first_grant_tick - p.inject_tick
        n = p.deliver_tick - p.first_grant_tick
        queuing += q
        in_network += n
        total += q + n
        hops += p.hops
        totals.append(q + n)
    count = len(totals)
    totals.sort()
    if count == 0:
        return {"packets": 0}
    return {
        "packets": count,
        "mean_queuing": round(queuing / count, 6),
        "mean_in_network": round(in_network / count, 6),
        "mean_total": round(total / count, 6),
        "mean_hops": round(hops / count, 6),
        "p50_total": percentile(totals, 0.50),
        "p95_total": percentile(totals, 0.95),
        "p99_total": percentile(totals, 0.99),
    }


@dataclass
class SimReport:
    config: dict
    halt_cause: str  # completed | security | deadlock | budget
    halt_tick: int
    halt_detail: str
    violations: list[dict]
    latency: dict
    sni: dict
    counters: dict
    ledger: dict
    coherence: dict
    delivery_log: dict | None = None

    @property
    def exit_code(self) -> int:
        return {
            "completed": EXIT_OK,
            "security": EXIT_SECURITY,
            "deadlock": EXIT_DEADLOCK,
            "budget": EXIT_DEADLOCK,
        }[self.halt_cause]

    def to_dict(self) -> dict:
        out = {
            "schema": REPORT_SCHEMA,
            "config": self.config,
            "halt": {
                "cause": self.halt_cause,
                "tick": self.halt_tick,
                "icycle": self.halt_tick // CLOCK_RATIO,
                "detail": self.halt_detail,
            },
            "violations": self.violations,
            "latency": self.latency,
            "sni": self.sni,
            "counters": self.counters,
            "ledger": self.ledger,
            "coherence": self.coherence,
        }
        if self.delivery_log is not None:
            out["delivery_log"] = self.delivery_log
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


class Simulator:
    """One fully assembled system plus its event loop."""

    def __init__(self, cfg: RunConfig):
        errors = cfg.validate()
        if errors:
            raise ConfigError("; ".join(errors))
        self.cfg = cfg
        self.topo = cfg.topology()
        topo = self.topo
        base_table = cfg.permissions or ApuTable.uniform(Permission.READ_WRITE)
        # One replica per interface router, swapped together at privileged
        # updates so they stay bitwise identical.
        self.replicas: dict[int, ApuTable] = {}
        self.tick = 0
        self.swmr = SwmrChecker()
        self.oracle = MemoryOracle()
        self.dram = Dram()
        self.delivered_packets = 0
        self.leaked_deliveries = 0
        self.delivery_log: dict[str, list[str]] | None = (
            {} if cfg.collect_delivery_log else None
        )
        self.probes_delivered = {k: 0 for k in range(topo.n_chiplets)}

        self.fabric = Fabric(
            topo,
            cfg.interposer_width,
            cfg.vc_per_vnet,
            cfg.vc_depth,
            sni_factory=self._sni_factory,
            deliver_chiplet=self._deliver_chiplet,
            deliver_mc=self._deliver_mc,
            egress_cap=cfg.boundary_egress_cap,
            enable_trace=cfg.enable_trace,
        )
        for unit in list(self.fabric.chiplet_snis.values()) + list(
            self.fabric.mc_snis.values()
        ):
            self.replicas[unit.cfg.attached_router] = base_table
        self._pending_updates = sorted(cfg.permission_updates)

        self.directories = {
            m: Directory(
                m, topo, self.dram, self._make_dir_send(m), cfg.dram_latency
            )
            for m in range(topo.n_mcs)
        }
        self.cores: dict[int, Core] = {}
        retry_ticks = cfg.retry_backoff_icycles * CLOCK_RATIO
        for c in range(topo.n_cores):
            cache = PrivateCache(cfg.cache_lines, self.swmr.update)
            self.cores[c] = Core(
                c, topo, cache, self._core_send, self.oracle.commit, retry_ticks
            )
        self.agents = {
            k: ChipletAgent(
                k, [self.cores[c] for c in topo.core_range(k)], topo,
                self._agent_send,
            )
            for k in range(topo.n_chiplets)
        }

        ops = workloads.generate(cfg.workload, topo, base_table, cfg.seed)
        for c, stream in ops.items():
            self.cores[c].load_ops(stream)

        self._attack_queue = sorted(
            cfg.attacks, key=lambda s: (s.trigger_tick, s.name)
        )
        self._core_order = [self.cores[c] for c in sorted(self.cores)]
        self.halt_cause = "completed"
        self.halt_tick = 0
        self.halt_detail = ""
        self.violations = []

    # -- wiring -----------------------------------------------------------

    def _sni_factory(self, kind: str, router_id: int, index: int, forward, spawn):
        cfg = self.cfg
        if kind == "sni1":
            sni_cfg = SniConfig(
                kind=SniKind.SNI1,
                attached_router=router_id,
                expected_requesters=self.topo.core_range(index),
                topo=self.topo,
                check_mc_traffic=cfg.check_mc_traffic,
            )
        else:
            mc_node = self.topo.mc_node(index)
            sni_cfg = SniConfig(
                kind=SniKind.SNI2,
                attached_router=router_id,
                expected_requesters=range(mc_node, mc_node + 1),
                topo=self.topo,
                check_mc_traffic=cfg.check_mc_traffic,
            )
        return SniUnit(
            sni_cfg,
            cfg.interposer_width,
            table_getter=lambda rid=router_id: self.replicas[rid],
            forward=forward,
            spawn_packet=spawn,
            enabled=cfg.sni_enabled,
            rewrite_enabled=cfg.sni2_rewrite,
            input_capacity=cfg.sni_input_capacity,
        )

    def _core_send(self, msg, tick):
        self.fabric.inject_from_core(msg, tick)

    def _agent_send(self, msg, tick, src_core):
        self.fabric.inject_from_core(msg, tick)

    def _make_dir_send(self, mc: int):
        def send(msg, target_chiplet=None):
            self.fabric.inject_from_mc(msg, mc, self.tick, target_chiplet)

        return send

    def _log_delivery(self, key: str, msg) -> None:
        if self.delivery_log is not None:
            self.delivery_log.setdefault(key, []).append(msg.canonical_text())

    def _deliver_chiplet(self, chiplet: int, packet: Packet, tick: int) -> None:
        self.delivered_packets += 1
        msg = packet.msg
        if packet.target_chiplet is not None and msg.msg_type in (
            MsgType.PROBE, MsgType.PROBE_INV
        ):
            self.probes_delivered[chiplet] += 1
            self._log_delivery(f"chiplet{chiplet}", msg)
            self.agents[chiplet].handle_probe(msg, tick)
        elif self.topo.is_core(msg.destination_id):
            self._log_delivery(f"core{msg.destination_id}", msg)
            if packet.malicious:
                # A hostile packet made it past (or around) the SNIs.
                self.leaked_deliveries += 1
            self.cores[msg.destination_id].handle(msg, tick)
        # anything else is a delivered-but-unroutable packet; the SNIs
        # should make this unreachable for well-formed systems

    def _deliver_mc(self, mc: int, packet: Packet, tick: int) -> None:
        self.delivered_packets += 1
        self._log_delivery(f"mc{mc}", packet.msg)
        if packet.malicious:
            self.leaked_deliveries += 1
        self.directories[mc].deliver(packet.msg, tick)

    # -- loop -------------------------------------------------------------

    def _inflight(self) -> int:
        dropped = sum(
            u.stats.rewrites
            for u in self.fabric.mc_snis.values()
        )
        return len(self.fabric.registry) - self.delivered_packets - dropped

    def _all_cores_done(self) -> bool:
        return all(core.done for core in self.cores.values())

    def _dirs_idle(self) -> bool:
        return all(d.idle for d in self.directories.values())

    def _next_event_tick(self, tick: int) -> int | None:
        """Earliest future tick at which an idle system wakes up."""
        candidates = []
        for core in self.cores.values():
            if core.evict_addr is not None:
                if core.evict_retry is not None:
                    candidates.append(core.evict_retry)
                else:
                    return tick + 1  # response in flight; should not happen idle
            elif core.txn is not None:
                if core.retry_tick is not None:
                    candidates.append(core.retry_tick)
                else:
                    return tick + 1
            elif core.op_idx < len(core.ops):
                candidates.append(core.next_issue_tick)
        if self._attack_queue:
            candidates.append(self._attack_queue[0].trigger_tick)
        if self._pending_updates:
            candidates.append(self._pending_updates[0][0] * CLOCK_RATIO)
        if not candidates:
            return None
        return max(tick + 1, min(candidates))

    def _apply_permission_updates(self, icycle: int) -> None:
        while self._pending_updates and self._pending_updates[0][0] <= icycle:
            _, region, chiplet, perm = self._pending_updates.pop(0)
            # A single privileged write lands in every replica between
            # cycles: swap all snapshots at once.
            sample = next(iter(self.replicas.values()))
            updated = sample.privileged_update(region, chiplet, perm)
            for rid in self.replicas:
                self.replicas[rid] = updated

    def replicas_identical(self) -> bool:
        images = {t.serialize() for t in self.replicas.values()}
        return len(images) == 1

    def run(self) -> SimReport:
        cfg = self.cfg
        tick = 0
        last_progress = 0
        halted = False
        while tick <= cfg.max_ticks:
            self.tick = tick
            self.swmr.tick = tick
            progressed = False
            if tick % CLOCK_RATIO == 0:
                icycle = tick // CLOCK_RATIO
                self._apply_permission_updates(icycle)
                for m in sorted(self.directories):
                    progressed |= self.directories[m].step(icycle)
                violations, moved = self.fabric.step_interposer(tick)
                progressed |= moved
                if violations:
                    violations.sort(key=lambda v: v.sort_key())
                    self.violations = violations
                    self.halt_cause = "security"
                    self.halt_tick = tick
                    self.halt_detail = violations[0].detail
                    halted = True
                    break
            progressed |= self.fabric.step_chiplets(tick)
            while self._attack_queue and self._attack_queue[0].trigger_tick <= tick:
                scenario = self._attack_queue.pop(0)
                self.fabric.inject_from_core_as(
                    scenario.msg, scenario.src_core, tick
                )
                progressed = True
            for core in self._core_order:
                progressed |= core.step(tick)

            icycle = tick // CLOCK_RATIO
            if progressed:
                last_progress = icycle
            elif icycle - last_progress > cfg.watchdog_icycles:
                self.halt_cause = "deadlock"
                self.halt_tick = tick
                self.halt_detail = (
                    f"no progress for {cfg.watchdog_icycles} interposer cycles"
                )
                halted = True
                break

            if tick % 8 == 0 and self._inflight() == 0 and self._dirs_idle():
                if (
                    self._all_cores_done()
                    and not self._attack_queue
                    and not self._pending_updates
                ):
                    self.halt_tick = tick
                    halted = True
                    break
                nxt = self._next_event_tick(tick)
                if nxt is not None and nxt > tick + 1:
                    # Fast-forward through a provably idle stretch,
                    # preserving the 4-tick interposer alignment by
                    # simply resuming the normal loop at the target.
                    tick = nxt
                    last_progress = tick // CLOCK_RATIO
                    continue
            tick += 1
        if not halted:
            self.halt_cause = "budget"
            self.halt_tick = cfg.max_ticks
            self.halt_detail = f"cycle budget of {cfg.max_ticks} ticks exhausted"

        return self._report()

    # -- reporting --------------------------------------------------------

    def _sni_summary(self) -> dict:
        out = {}
        for name, unit in sorted(
            list(
                (f"sni1-chiplet{k}", u)
                for k, u in self.fabric.chiplet_snis.items()
            )
            + list((f"sni2-mc{m}", u) for m, u in self.fabric.mc_snis.items())
        ):
            s = unit.stats
            out[name] = {
                "checked": s.checked,
                "allowed": s.allowed,
                "violations": s.violations,
                "rewrites": s.rewrites,
                "filtered_per_chiplet": {
                    str(k): v for k, v in sorted(s.filtered_per_chiplet.items())
                },
            }
        return out

    def _report(self) -> SimReport:
        full_census = self.swmr.full_check(
            [core.cache for core in self.cores.values()]
        )
        counters = {
            "transactions": sum(c.stats_transactions for c in self.cores.values()),
            "retries": sum(c.stats_retries for c in self.cores.values()),
            "commits": len(self.oracle.log),
            "probes_delivered": {
                str(k): v for k, v in sorted(self.probes_delivered.items())
            },
            "nacks_rewritten": sum(
                u.stats.rewrites for u in self.fabric.mc_snis.values()
            ),
            "replicas_identical": self.replicas_identical(),
            "final_tick": self.halt_tick,
        }
        return SimReport(
            config=self.cfg.describe(),
            halt_cause=self.halt_cause,
            halt_tick=self.halt_tick,
            halt_detail=self.halt_detail,
            violations=[json.loads(v.to_json()) for v in self.violations],
            latency=collect_latency(self.fabric.registry),
            sni=self._sni_summary(),
            counters=counters,
            ledger=self.fabric.ledger(),
            coherence={
                "swmr_violations": list(self.swmr.violations) + full_census,
                "oracle_divergences": list(self.oracle.divergences),
                "commits": len(self.oracle.log),
            },
            delivery_log=(
                {k: list(v) for k, v in sorted(self.delivery_log.items())}
                if self.delivery_log is not None
                else None
            ),
        )


def run_config(cfg: RunConfig) -> SimReport:
    return Simulator(cfg).run()


def with_sni(cfg: RunConfig, enabled: bool) -> RunConfig:
    return replace(cfg, sni_enabled=enabled, label=f"{cfg.label}-sni-{'on' if enabled else 'off'}")
