"""Abstract memory workloads: access-pattern descriptors and their executor.

A measured workload is two region lists: an untimed prime pass that warms
translations and lines, and a timed measure pass.  Each Region describes a
simple sweep::

    pages    -- how many 4 KiB virtual pages, starting at base
    stride   -- byte step inside each page (stride >= page size means one
                access per page)
    order    -- page visit order: forward, reverse, or random (seeded)
    repeats  -- how many times to sweep the whole region
    kind     -- read / write / ifetch
    compute_cycles -- flat cycle charge after every access (models the
                work done between memory operations)

The classic TLB micro-benchmark is then: prime the pages forward, measure
them in reverse (reverse order avoids self-eviction, so every measured
miss was inflicted from outside).

An InterferenceLoop is open-ended instead: it visits uniformly random
pages of its pool, a few line-granular touches per visit, until the cycle
quantum the scheduler granted is used up.
"""

from dataclasses import dataclass

from .sv39 import SIZE_4K

ORDERS = ("forward", "reverse", "random")
KINDS = ("read", "write", "ifetch")


class SimulationError(RuntimeError):
    """A scenario is internally inconsistent (e.g. a workload faulted)."""


@dataclass(frozen=True)
class Region:
    base: int
    pages: int
    stride: int = SIZE_4K
    order: str = "forward"
    repeats: int = 1
    kind: str = "read"
    compute_cycles: int = 0

    def __post_init__(self):
        if self.base % SIZE_4K or self.base < 0:
            raise ValueError("region base 0x%x is not page-aligned" % self.base)
        if self.pages < 1 or self.repeats < 1:
            raise ValueError("region needs at least one page and one repeat")
        if self.stride < 8 or self.stride % 8:
            raise ValueError("stride must be a positive multiple of 8 bytes")
        if self.order not in ORDERS:
            raise ValueError("order must be one of %r" % (ORDERS,))
        if self.kind not in KINDS:
            raise ValueError("kind must be one of %r" % (KINDS,))
        if self.compute_cycles < 0:
            raise ValueError("compute_cycles must be >= 0")

    @property
    def accesses_per_sweep(self):
        per_page = max(1, SIZE_4K // self.stride) if self.stride < SIZE_4K else 1
        return self.pages * per_page

    def addresses(self, rng=None):
        """Yield the access addresses of the full sweep (all repeats)."""
        pages = list(range(self.pages))
        if self.order == "reverse":
            pages.reverse()
        elif self.order == "random":
            if rng is None:
                raise ValueError("random order needs a seeded generator")
            rng.shuffle(pages)
        for _ in range(self.repeats):
            for p in pages:
                page_base = self.base + p * SIZE_4K
                for off in range(0, SIZE_4K, self.stride):
                    yield page_base + off


@dataclass(frozen=True)
class Workload:
    """prime runs untimed before every measurement; measure is what's timed."""

    prime: tuple
    measure: tuple

    def __post_init__(self):
        object.__setattr__(self, "prime", tuple(self.prime))
        object.__setattr__(self, "measure", tuple(self.measure))


@dataclass(frozen=True)
class InterferenceLoop:
    """Open-ended random-page pounding, sized by the scheduler's quantum."""

    base: int
    pages: int
    stride: int = 64
    touches_per_page: int = 8
    kind: str = "read"
    compute_cycles: int = 0

    def __post_init__(self):
        if self.base % SIZE_4K or self.base < 0:
            raise ValueError("loop base 0x%x is not page-aligned" % self.base)
        if self.pages < 1 or self.touches_per_page < 1:
            raise ValueError("loop needs at least one page and one touch per visit")
        if self.stride < 8 or self.stride % 8:
            raise ValueError("stride must be a positive multiple of 8 bytes")
        if self.kind not in KINDS:
            raise ValueError("kind must be one of %r" % (KINDS,))
        if self.compute_cycles < 0:
            raise ValueError("compute_cycles must be >= 0")


def _write_value(vaddr):
    # Any deterministic function of the address will do; this one makes
    # memory contents recognizable in dumps.
    return (vaddr >> 3) & 0xFFFF_FFFF


def run_regions(sys, vm, regions, rng=None):
    """Execute a region list on behalf of vm; returns total cycles.

    A translation fault here is always a scenario bug (workloads only
    touch mapped regions), so it raises instead of being priced.
    """
    total = 0
    for region in regions:
        for vaddr in region.addresses(rng):
            value = _write_value(vaddr) if region.kind == "write" else None
            out = sys.virtual_access(vaddr, region.kind, vm, value=value)
            if not out.ok:
                raise SimulationError(
                    "workload access 0x%x faulted (%s, stage %s)"
                    % (vaddr, out.fault, out.fault_stage)
                )
            total += out.total_cycles + region.compute_cycles
    return total


def run_interference(sys, vm, loop, quantum, rng):
    """Run the interference loop until `quantum` cycles are consumed.

    The loop stops at the first access boundary past the quantum, so the
    overshoot is bounded by a single access (scheduler fairness).
    """
    spent = 0
    per_page = max(1, SIZE_4K // loop.stride)
    while spent < quantum:
        page_base = loop.base + rng.randrange(loop.pages) * SIZE_4K
        for _ in range(min(loop.touches_per_page, per_page)):
            vaddr = page_base + rng.randrange(per_page) * loop.stride
            value = _write_value(vaddr) if loop.kind == "write" else None
            out = sys.virtual_access(vaddr, loop.kind, vm, value=value)
            if not out.ok:
                raise SimulationError(
                    "interference access 0x%x faulted (%s, stage %s)"
                    % (vaddr, out.fault, out.fault_stage)
                )
            spent += out.total_cycles + loop.compute_cycles
            if spent >= quantum:
                break
    return spent
