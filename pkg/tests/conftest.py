"""Shared fixtures for the interposim test suite."""

import pytest

from interposim.apu import ApuTable, Permission
from interposim.topology import Topology


@pytest.fixture
def topo8() -> Topology:
    """The full 8-chiplet / 4-controller machine."""
    return Topology(n_chiplets=8, cores_per_chiplet=8, n_mcs=4)


@pytest.fixture
def topo_small() -> Topology:
    """The 2-chiplet desk-scale machine."""
    return Topology(n_chiplets=2, cores_per_chiplet=2, n_mcs=2)


@pytest.fixture
def rw_table() -> ApuTable:
    return ApuTable.uniform(Permission.READ_WRITE)
