"""Cycle-annotated model of a virtual-memory subsystem with partitionable,
lockable TLBs and runtime cache/scratchpad reconfiguration, plus a small
hypervisor/scheduler model and an experiment harness around it."""

__version__ = "0.1.0"
