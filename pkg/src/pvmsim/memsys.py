"""Per-access latency pipeline: TLB, then walker, then cache/scratchpad.

One MemorySystem models the memory side of a single hart::

                 ifetch                      read/write
                   |                             |
                 I-TLB                         D-TLB
                   |     (miss: table walk,      |
                   |      PTE fetches priced     |
                   |      by the D-cache)        |
                   v                             v
                I-cache <---- SPM window ----> D-cache
                   \\                             /
                    '----- shared backing memory

Every access is decomposed into three cycle components:

  translation  -- the TLB lookup itself (charged on hits and misses alike)
  walk         -- the summed cost of all PTE fetches (zero on a TLB hit)
  cache        -- the final physical access through the I- or D-side array

The optional jitter models memory-controller noise: every access that
actually reaches backing memory (a cache miss or fill-drop) pays
memory_cycles plus a uniform draw from [-j, +j].  Hits, SPM accesses and
lock-slot translations never consult the generator, so a fully locked,
SPM-resident access path stays cycle-constant even with jitter enabled.
"""

from dataclasses import dataclass

from .cache import EVENT_MISS, Cache, Memory
from .sv39 import PTE_G
from .tlb import PartitionCsrFile, Tlb, TlbEntry
from .walker import walk_single, walk_two_stage

KINDS = ("read", "write", "ifetch")


@dataclass
class LatencyConfig:
    """All cycle prices in one place.  These are simulator calibration
    constants (configurable per experiment), not measurements of any
    particular silicon."""

    tlb_hit_cycles: int = 1
    cache_hit_cycles: int = 1
    spm_cycles: int = 1
    memory_cycles: int = 40
    trap_entry_cycles: int = 50
    trap_exit_cycles: int = 50
    vm_switch_cycles: int = 400
    jitter: int = 0  # uniform +/- bound applied per memory access; 0 disables

    def validate(self):
        for name in (
            "tlb_hit_cycles",
            "cache_hit_cycles",
            "spm_cycles",
            "memory_cycles",
            "trap_entry_cycles",
            "trap_exit_cycles",
            "vm_switch_cycles",
            "jitter",
        ):
            if getattr(self, name) < 0:
                raise ValueError("%s must be >= 0" % name)
        if self.jitter >= self.memory_cycles and self.jitter:
            raise ValueError(
                "jitter bound %d must stay below memory_cycles %d"
                % (self.jitter, self.memory_cycles)
            )
        return self


@dataclass
class MemAccessOutcome:
    """One access, fully accounted.  total_cycles is always the sum of the
    three components; faults simply leave the later components at zero."""

    total_cycles: int = 0
    translation_cycles: int = 0
    walk_cycles: int = 0
    cache_cycles: int = 0
    tlb_hit: bool = False
    lock_hit: bool = False
    walk_fetches: int = 0
    cache_event: str = None  # hit | miss | spm | spm-misconfig | None on fault
    fault: str = None  # None | non-canonical | invalid | misaligned | no-leaf
    fault_stage: str = None  # None | guest | host
    value: int = None
    paddr: int = None

    @property
    def ok(self):
        return self.fault is None

    def _finalize(self):
        self.total_cycles = self.translation_cycles + self.walk_cycles + self.cache_cycles
        return self


class MemorySystem:
    """Composes the per-hart TLBs and caches into one access pipeline.

    The vm argument of virtual_access duck-types: it must carry `asid`,
    `vmid`, `guest_space` and `host_space` attributes (host_space None
    selects a single-stage walk).  Lock-slot programming and partition CSR
    writes happen directly on the member TLBs / shared CSR file.
    """

    def __init__(self, *, itlb, dtlb, icache, dcache, latency=None, rng=None):
        self.latency = (latency or LatencyConfig()).validate()
        if self.latency.jitter and rng is None:
            raise ValueError("jitter is enabled but no seeded generator was supplied")
        self.itlb = itlb
        self.dtlb = dtlb
        self.icache = icache
        self.dcache = dcache
        self.rng = rng

    @classmethod
    def build(
        cls,
        memory=None,
        latency=None,
        *,
        tlb_entries=16,
        partition_count=16,
        lock_slots=8,
        icache_sets=128,
        dcache_sets=256,
        ways=8,
        line_bytes=16,
        ispm_base=None,
        dspm_base=None,
        rng=None,
    ):
        """Convenience constructor wiring shared CSR file, memory and prices."""
        latency = (latency or LatencyConfig()).validate()
        if memory is None:
            memory = Memory()
        csr = PartitionCsrFile(partition_count)

        def make_tlb(name):
            return Tlb(
                csr,
                entries=tlb_entries,
                partition_count=partition_count,
                lock_slots=lock_slots,
                hit_cycles=latency.tlb_hit_cycles,
                name=name,
            )

        def make_cache(sets, base, name):
            return Cache(
                memory,
                ways=ways,
                sets=sets,
                line_bytes=line_bytes,
                hit_cycles=latency.cache_hit_cycles,
                miss_cycles=latency.memory_cycles,
                spm_cycles=latency.spm_cycles,
                spm_base=base,
                name=name,
            )
        return cls(
            itlb=make_tlb("itlb"),
            dtlb=make_tlb("dtlb"),
            icache=make_cache(icache_sets, ispm_base, "icache"),
            dcache=make_cache(dcache_sets, dspm_base, "dcache"),
            latency=latency,
            rng=rng,
        )

    @property
    def csr(self):
        """The partition CSR file (shared by both TLBs)."""
        return self.dtlb.csr

    @property
    def memory(self):
        return self.dcache.memory

    # -- pricing helpers ------------------------------------------------------

    def _memory_noise(self):
        j = self.latency.jitter
        if not j:
            return 0
        return self.rng.randint(-j, j)

    def _priced_access(self, cache, paddr, kind, value=None):
        """Cache access plus the jitter surcharge for real memory trips."""
        res = cache.access(paddr, kind, value)
        latency = res.latency
        if res.event == EVENT_MISS:
            latency += self._memory_noise()
        return res, latency

    def _walk_fetch(self, paddr):
        _, latency = self._priced_access(self.dcache, paddr, "read")
        return latency

    # -- the pipeline -----------------------------------------------------------

    def virtual_access(self, vaddr, kind, vm, value=None):
        """Translate and perform one access on behalf of `vm`."""
        if kind not in KINDS:
            raise ValueError("kind must be one of %r, got %r" % (KINDS, kind))
        tlb = self.itlb if kind == "ifetch" else self.dtlb
        out = MemAccessOutcome()
        look = tlb.lookup(vaddr, vm.asid, vm.vmid)
        out.translation_cycles = look.cycles
        if look.status == "fault":
            out.fault = "non-canonical"
            return out._finalize()
        if look.hit:
            out.tlb_hit = True
            out.lock_hit = look.lock_hit
            paddr = look.paddr
        else:
            if vm.host_space is None:
                walk = walk_single(vm.guest_space, vaddr, self._walk_fetch)
            else:
                walk = walk_two_stage(vm.guest_space, vm.host_space, vaddr, self._walk_fetch)
            out.walk_cycles = walk.cycles
            out.walk_fetches = len(walk.accesses)
            if not walk.ok:
                out.fault = walk.fault
                out.fault_stage = walk.fault_stage
                return out._finalize()
            paddr = walk.paddr
            tlb.fill(
                TlbEntry(
                    vpn=walk.vpn,
                    page_size=walk.page_size,
                    asid=vm.asid,
                    vmid=vm.vmid,
                    pte=walk.pte,
                    global_flag=bool(walk.pte & PTE_G),
                )
            )
        cache = self.icache if kind == "ifetch" else self.dcache
        res, cycles = self._priced_access(cache, paddr, kind, value)
        out.cache_cycles = cycles
        out.cache_event = res.event
        out.value = res.value
        out.paddr = paddr
        return out._finalize()

    # -- bookkeeping ---------------------------------------------------------

    def miss_counts(self):
        """(tlb_misses, cache_misses) across both sides, for run statistics."""
        tlb = self.itlb.misses + self.dtlb.misses
        cache = self.icache.stats["misses"] + self.dcache.stats["misses"]
        return tlb, cache

    def reset_stats(self):
        self.itlb.reset_stats()
        self.dtlb.reset_stats()
        self.icache.reset_stats()
        self.dcache.reset_stats()
