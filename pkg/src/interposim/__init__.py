"""interposim: flit-level simulation of a security-filtered interposer NoC.

Chiplets talk cache coherence across an active silicon interposer whose
network embeds Security Network Interfaces (SNIs) at every ingress
link.  The package models the message codec, the address-protection
tables, the two-clock-domain wormhole network, a simplified MOESI
protocol with hybrid sparse directories, and the attack/measurement
harness around them.
"""

from .apu import ApuEntry, ApuTable, Permission
from .harness import RunConfig, SimReport, Simulator, run_config
from .messages import CoherenceMessage, MsgType, decode, encode
from .sni import SniUnit, ThreatClass
from .topology import Topology
from .workloads import WorkloadSpec

__version__ = "1.0.0"

__all__ = [
    "ApuEntry",
    "ApuTable",
    "CoherenceMessage",
    "MsgType",
    "Permission",
    "RunConfig",
    "SimReport",
    "Simulator",
    "SniUnit",
    "ThreatClass",
    "Topology",
    "WorkloadSpec",
    "decode",
    "encode",
    "run_config",
    "__version__",
]
