"""Harness tests: configuration, exit codes, accounting, permission updates."""

from dataclasses import replace

import pytest

from interposim import presets
from interposim.apu import Permission
from interposim.harness import (
    EXIT_DEADLOCK,
    EXIT_OK,
    EXIT_SECURITY,
    ConfigError,
    RunConfig,
    Simulator,
    collect_latency,
    percentile,
    with_sni,
)
from interposim.noc import Packet
from interposim.messages import CoherenceMessage, MsgType
from interposim.workloads import WorkloadSpec


class TestConfigValidation:
    def test_defaults_are_valid(self):
        assert RunConfig().validate() == []

    def test_bad_width(self):
        assert RunConfig(interposer_width=96).validate()

    def test_bad_vc_count(self):
        assert RunConfig(vc_per_vnet=5).validate()

    def test_vc_choices_accepted(self):
        for n in (4, 6, 8, 10):
            assert RunConfig(vc_per_vnet=n).validate() == []

    def test_bad_topology(self):
        assert RunConfig(n_chiplets=12).validate()

    def test_bad_workload_propagates(self):
        assert RunConfig(workload=WorkloadSpec(kind="nope")).validate()

    def test_bad_permission_update(self):
        cfg = RunConfig(permission_updates=((0, 99, 0, Permission.READ_ONLY),))
        assert cfg.validate()

    def test_simulator_rejects_invalid_config(self):
        with pytest.raises(ConfigError):
            Simulator(RunConfig(interposer_width=96))


class TestLatencyAggregation:
    def test_percentile_nearest_rank(self):
        values = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100]
        assert percentile(values, 0.50) == 50
        assert percentile(values, 0.95) == 100
        assert percentile(values, 0.99) == 100
        assert percentile([], 0.5) == 0

    def test_decomposition_sums(self):
        def packet(inject, grant, deliver, hops):
            p = Packet(0, CoherenceMessage(MsgType.GETS, 0, 64, 0, 0), 0, 64, 0)
            p.inject_tick, p.first_grant_tick = inject, grant
            p.deliver_tick, p.hops = deliver, hops
            return p

        stats = collect_latency([
            packet(0, 8, 20, 3), packet(4, 8, 40, 5),
        ])
        assert stats["packets"] == 2
        assert stats["mean_queuing"] + stats["mean_in_network"] == pytest.approx(
            stats["mean_total"]
        )
        assert stats["mean_total"] == pytest.approx((20 + 36) / 2)
        assert stats["mean_hops"] == 4.0

    def test_dropped_and_loopback_excluded(self):
        p = Packet(0, CoherenceMessage(MsgType.GETS, 0, 64, 0, 0), 0, 64, 0)
        p.inject_tick, p.first_grant_tick, p.deliver_tick = 0, 1, 2
        p.loopback = True
        assert collect_latency([p]) == {"packets": 0}
        assert collect_latency([p], include_loopback=True)["packets"] == 1


class TestRunOutcomes:
    def test_clean_run_exit_zero(self):
        report = Simulator(presets.desk_scale(seed=0)).run()
        assert report.exit_code == EXIT_OK
        assert report.halt_cause == "completed"
        assert report.ledger["balanced"]
        assert report.ledger["packets_in_flight"] == 0
        assert report.counters["replicas_identical"]
        # Per-packet decomposition holds in the aggregates.
        lat = report.latency
        assert lat["mean_queuing"] + lat["mean_in_network"] == pytest.approx(
            lat["mean_total"], abs=1e-6
        )

    def test_security_halt_exit_two(self):
        table = presets.attack_demo_table()
        cfg = replace(
            presets.baseline(128, seed=0),
            permissions=table,
            workload=WorkloadSpec(kind="idle"),
        )
        from interposim.attacks import standard_suite

        scenario = standard_suite(cfg.topology(), table)[0]
        report = Simulator(replace(cfg, attacks=(scenario,))).run()
        assert report.exit_code == EXIT_SECURITY
        assert report.violations

    def test_budget_exhaustion_exit_three(self):
        cfg = replace(presets.desk_scale(seed=0), max_ticks=500)
        report = Simulator(cfg).run()
        assert report.halt_cause == "budget"
        assert report.exit_code == EXIT_DEADLOCK

    def test_report_json_is_stable(self):
        cfg = presets.desk_scale(seed=3)
        a = Simulator(cfg).run().to_json()
        b = Simulator(cfg).run().to_json()
        assert a == b

    def test_sni_delay_fields_reported(self):
        sim = Simulator(presets.desk_scale(seed=0))
        report = sim.run()
        assert report.halt_cause == "completed"
        kinds = {p.sni_kind for p in sim.fabric.registry if p.sni_kind}
        assert kinds == {"sni1", "sni2"}

    def test_delivery_log_collection(self):
        cfg = replace(presets.desk_scale(seed=0), collect_delivery_log=True)
        report = Simulator(cfg).run()
        assert report.delivery_log
        assert any(key.startswith("mc") for key in report.delivery_log)
        assert "delivery_log" in report.to_dict()


class TestPermissionUpdates:
    def test_privileged_update_hits_every_replica(self):
        cfg = replace(
            presets.desk_scale(seed=0),
            workload=WorkloadSpec(kind="idle"),
            max_ticks=200,
            permission_updates=((3, 1, 0, Permission.NO_ACCESS),),
        )
        sim = Simulator(cfg)
        sim.run()
        assert sim.replicas_identical()
        shift = cfg.permissions.region_shift
        for table in sim.replicas.values():
            assert table.permission(1 << shift, 0) is Permission.NO_ACCESS
            assert table.permission(0, 0) is Permission.READ_WRITE

    def test_update_changes_checker_outcome(self):
        """Revoking a region mid-run turns later benign reads into halts."""
        cfg = replace(
            presets.desk_scale(seed=0),
            workload=WorkloadSpec(kind="idle"),
            permission_updates=((10, 0, 0, Permission.NO_ACCESS),),
        )
        sim = Simulator(cfg)
        sim.cores[0].load_ops([(200, "R", 0x40, 0)])
        report = sim.run()
        assert report.halt_cause == "security"
        assert report.violations[0]["threat"] == "passive_reading"


def test_with_sni_labels():
    cfg = presets.desk_scale(seed=0)
    assert with_sni(cfg, False).sni_enabled is False
    assert with_sni(cfg, False).label.endswith("sni-off")
    assert with_sni(cfg, True).label.endswith("sni-on")
