"""Set-associative L1 cache model with per-way scratchpad (SPM) conversion.

Each cache way can be switched at run time between two modes:

  CACHE  -- the way participates in normal set-associative lookup and in
            per-set tree-PLRU victim selection.
  SPM    -- the way is removed from the associativity (locked in every
            set's PLRU tree, tags invalidated) and its data array is
            instead exposed directly through a physical address window.

The SPM window maps the whole data array contiguously, one way after the
other::

      spm_base                                          spm_base + size
      |   way 0    |   way 1    |   way 2    |  ...  |   way W-1   |
      '------------'------------'
        sets * line_bytes each

so for an address inside the window:

      offset   = paddr - spm_base
      way      = offset // (sets * line_bytes)
      set      = (offset % (sets * line_bytes)) // line_bytes
      word     = (offset % line_bytes) // 8

Only ways currently in SPM mode respond with real storage.  Hitting the
window slice of a way that is still in CACHE mode is a software
misconfiguration: writes are silently dropped and reads return dummy
zeros, both at the normal SPM latency so the pipeline never stalls on
the mistake.

All accesses are modeled at 64-bit word granularity, which is the unit
everything else in the simulator uses (page-table entries, workload
loads/stores).  Data is tracked for real so that write-back and SPM
round-trip behavior can be checked against backing memory.
"""

from .plru import PlruTree, _is_pow2

WORD_BYTES = 8

MODE_CACHE = "cache"
MODE_SPM = "spm"

EVENT_HIT = "hit"
EVENT_MISS = "miss"
EVENT_SPM = "spm"
EVENT_SPM_MISCONFIG = "spm-misconfig"


class UnmappedAddress(ValueError):
    """An access targeted a physical address outside every modeled region."""


class Memory:
    """Sparse backing memory: explicit regions, 64-bit words, default zero.

    Regions must be declared up front (``add_region``); touching an
    address outside all regions raises :class:`UnmappedAddress`, which
    always indicates a simulator configuration mistake rather than a
    modeled hardware fault.
    """

    def __init__(self, regions=()):
        self._regions = []
        self._words = {}
        for base, size in regions:
            self.add_region(base, size)

    def add_region(self, base, size):
        if base < 0 or size <= 0:
            raise ValueError("region base/size must be non-negative/positive")
        self._regions.append((base, base + size))

    def contains(self, addr):
        return any(lo <= addr < hi for lo, hi in self._regions)

    def check(self, addr):
        if not self.contains(addr):
            raise UnmappedAddress("physical address 0x%x is outside every memory region" % addr)

    def read_word(self, addr):
        addr &= ~(WORD_BYTES - 1)
        self.check(addr)
        return self._words.get(addr, 0)

    def write_word(self, addr, value):
        addr &= ~(WORD_BYTES - 1)
        self.check(addr)
        self._words[addr] = value & (1 << 64) - 1


class AccessResult:
    """Outcome of one cache access.

    result is "data" when real storage was read or written, "dummy" for a
    read serviced with fabricated zeros, and "dropped" for a write that
    went nowhere (both of the latter only on SPM-window misconfiguration).
    """

    __slots__ = ("latency", "event", "result", "value")

    def __init__(self, latency, event, result, value):
        self.latency = latency
        self.event = event
        self.result = result
        self.value = value

    def __repr__(self):
        return "AccessResult(latency=%d, event=%r, result=%r, value=%r)" % (
            self.latency,
            self.event,
            self.result,
            self.value,
        )


def _stats_zero():
    return {
        "hits": 0,
        "misses": 0,
        "evictions": 0,
        "write_backs": 0,
        "fill_drops": 0,
        "spm_accesses": 0,
        "spm_misconfigs": 0,
    }


class Cache:
    """One L1 instruction or data cache with hybrid SPM support.

    The same object serves both personalities; instruction caches simply
    receive kind="ifetch" accesses and never see writes.  Latencies are
    flat per event class: hit_cycles on a tag match, miss_cycles for
    anything that goes to backing memory (refill, fill-drop), spm_cycles
    for everything decoded through the SPM window.
    """

    def __init__(
        self,
        memory,
        *,
        ways=8,
        sets=256,
        line_bytes=16,
        hit_cycles=1,
        miss_cycles=40,
        spm_cycles=1,
        spm_base=None,
        name="cache",
    ):
        for label, n in (("ways", ways), ("sets", sets), ("line_bytes", line_bytes)):
            if not _is_pow2(n):
                raise ValueError("%s must be a power of two, got %r" % (label, n))
        if line_bytes < WORD_BYTES:
            raise ValueError("line_bytes must be at least %d" % WORD_BYTES)
        self.memory = memory
        self.ways = ways
        self.sets = sets
        self.line_bytes = line_bytes
        self.way_bytes = sets * line_bytes
        self.size = ways * self.way_bytes
        self.words_per_line = line_bytes // WORD_BYTES
        self.hit_cycles = hit_cycles
        self.miss_cycles = miss_cycles
        self.spm_cycles = spm_cycles
        self.name = name
        if spm_base is not None:
            if spm_base % self.size:
                raise ValueError(
                    "SPM window base 0x%x must be aligned to the array size 0x%x"
                    % (spm_base, self.size)
                )
            if memory.contains(spm_base) or memory.contains(spm_base + self.size - 1):
                raise ValueError("SPM window overlaps a backing-memory region")
        self.spm_base = spm_base
        self.modes = [MODE_CACHE] * ways
        self._tags = [[0] * ways for _ in range(sets)]
        self._valid = [0] * sets  # bitmap over ways, per set
        self._dirty = [0] * sets
        self._data = [[None] * ways for _ in range(sets)]
        # One replacement tree per set; each way is its own partition so
        # SPM conversion can be expressed as a plain leaf lock.
        self._trees = [PlruTree(ways, ways) for _ in range(sets)]
        self._all_ways_mask = (1 << ways) - 1
        self.stats = _stats_zero()

    @classmethod
    def from_size(cls, memory, total_bytes, **kwargs):
        """Build a cache of `total_bytes` capacity, deriving the set count."""
        ways = kwargs.get("ways", 8)
        line_bytes = kwargs.get("line_bytes", 16)
        per_way = ways * line_bytes
        if total_bytes % per_way:
            raise ValueError(
                "total size %d is not a multiple of ways*line_bytes=%d" % (total_bytes, per_way)
            )
        kwargs["sets"] = total_bytes // per_way
        return cls(memory, **kwargs)

    # -- mode management ----------------------------------------------------

    def spm_ways(self):
        return tuple(w for w in range(self.ways) if self.modes[w] == MODE_SPM)

    def configure_way(self, way, mode):
        """Switch one way between CACHE and SPM mode.

        CACHE -> SPM: dirty lines in the way are written back first (the
        array becomes invisible to lookups, so anything not flushed now
        would be lost), then tags/valid/dirty are cleared, the way is
        locked in every set's replacement tree, and the storage is zeroed
        for its new life as scratchpad.  SPM -> CACHE: the way is simply
        unlocked and its contents discarded; tags are already invalid.
        """
        if not 0 <= way < self.ways:
            raise ValueError("way index %r out of range [0, %d)" % (way, self.ways))
        if mode not in (MODE_CACHE, MODE_SPM):
            raise ValueError("mode must be %r or %r, got %r" % (MODE_CACHE, MODE_SPM, mode))
        if self.modes[way] == mode:
            return
        bit = 1 << way
        if mode == MODE_SPM:
            for s in range(self.sets):
                if self._valid[s] & self._dirty[s] & bit:
                    self._write_back(s, way)
                self._valid[s] &= ~bit
                self._dirty[s] &= ~bit
                self._data[s][way] = [0] * self.words_per_line
                self._trees[s].set_lock(way, True)
        else:
            for s in range(self.sets):
                self._data[s][way] = None
                self._trees[s].set_lock(way, False)
        self.modes[way] = mode

    # -- address decode -------------------------------------------------------

    def in_spm_window(self, paddr):
        return self.spm_base is not None and self.spm_base <= paddr < self.spm_base + self.size

    def spm_decode(self, paddr):
        """Map a window address to (way, set, word); None outside the window."""
        if not self.in_spm_window(paddr):
            return None
        offset = paddr - self.spm_base
        way = offset // self.way_bytes
        set_idx = offset % self.way_bytes // self.line_bytes
        word = offset % self.line_bytes // WORD_BYTES
        return way, set_idx, word

    # -- the access path ------------------------------------------------------

    def access(self, paddr, kind="read", value=None):
        """Perform one 64-bit access; paddr is word-aligned internally."""
        if kind not in ("read", "write", "ifetch"):
            raise ValueError("kind must be read/write/ifetch, got %r" % (kind,))
        if kind == "write" and value is None:
            raise ValueError("write access needs a value")
        paddr &= ~(WORD_BYTES - 1)
        decoded = self.spm_decode(paddr)
        if decoded is not None:
            return self._spm_access(decoded, kind, value)
        return self._cached_access(paddr, kind, value)

    def _spm_access(self, decoded, kind, value):
        way, set_idx, word = decoded
        if self.modes[way] != MODE_SPM:
            # The window slice exists but its way was never converted:
            # behave like a black hole instead of stalling the core.
            self.stats["spm_misconfigs"] += 1
            if kind == "write":
                return AccessResult(self.spm_cycles, EVENT_SPM_MISCONFIG, "dropped", None)
            return AccessResult(self.spm_cycles, EVENT_SPM_MISCONFIG, "dummy", 0)
        self.stats["spm_accesses"] += 1
        line = self._data[set_idx][way]
        if kind == "write":
            line[word] = value & (1 << 64) - 1
            return AccessResult(self.spm_cycles, EVENT_SPM, "data", None)
        return AccessResult(self.spm_cycles, EVENT_SPM, "data", line[word])

    def _cached_access(self, paddr, kind, value):
        set_idx = paddr // self.line_bytes % self.sets
        tag = paddr // (self.line_bytes * self.sets)
        word = paddr % self.line_bytes // WORD_BYTES
        tags = self._tags[set_idx]
        valid = self._valid[set_idx]
        for way in range(self.ways):
            if valid >> way & 1 and tags[way] == tag and self.modes[way] == MODE_CACHE:
                self._trees[set_idx].touch(way)
                line = self._data[set_idx][way]
                self.stats["hits"] += 1
                if kind == "write":
                    line[word] = value & (1 << 64) - 1
                    self._dirty[set_idx] |= 1 << way
                    return AccessResult(self.hit_cycles, EVENT_HIT, "data", None)
                return AccessResult(self.hit_cycles, EVENT_HIT, "data", line[word])
        # Miss. Whatever happens next involves backing memory, so the
        # mapping check comes first and the whole event costs miss_cycles.
        self.stats["misses"] += 1
        line_base = paddr & ~(self.line_bytes - 1)
        self.memory.check(line_base)
        victim = self._trees[set_idx].insert(self._all_ways_mask)
        if victim is None:
            # Every way is SPM: nothing can be allocated, so the access
            # is serviced straight from memory and nothing is cached.
            self.stats["fill_drops"] += 1
            if kind == "write":
                self.memory.write_word(paddr, value)
                return AccessResult(self.miss_cycles, EVENT_MISS, "data", None)
            return AccessResult(self.miss_cycles, EVENT_MISS, "data", self.memory.read_word(paddr))
        bit = 1 << victim
        if self._valid[set_idx] & bit:
            self.stats["evictions"] += 1
            if self._dirty[set_idx] & bit:
                self._write_back(set_idx, victim)
        line = [
            self.memory.read_word(line_base + i * WORD_BYTES) for i in range(self.words_per_line)
        ]
        self._data[set_idx][victim] = line
        tags[victim] = tag
        self._valid[set_idx] |= bit
        if kind == "write":
            line[word] = value & (1 << 64) - 1
            self._dirty[set_idx] |= bit
            return AccessResult(self.miss_cycles, EVENT_MISS, "data", None)
        self._dirty[set_idx] &= ~bit
        return AccessResult(self.miss_cycles, EVENT_MISS, "data", line[word])

    def _write_back(self, set_idx, way):
        tag = self._tags[set_idx][way]
        line_base = (tag * self.sets + set_idx) * self.line_bytes
        line = self._data[set_idx][way]
        for i, w in enumerate(line):
            self.memory.write_word(line_base + i * WORD_BYTES, w)
        self._dirty[set_idx] &= ~(1 << way)
        self.stats["write_backs"] += 1

    # -- maintenance ----------------------------------------------------------

    def flush(self):
        """Write back every dirty line and invalidate all CACHE-mode ways."""
        for s in range(self.sets):
            dirty = self._dirty[s]
            way = 0
            while dirty:
                if dirty & 1:
                    self._write_back(s, way)
                dirty >>= 1
                way += 1
            # SPM ways never hold valid bits, so this only drops CACHE lines.
            self._valid[s] = 0
            self._dirty[s] = 0

    def reset_stats(self):
        self.stats = _stats_zero()

    # -- introspection (tests) --------------------------------------------------

    def probe(self, paddr):
        """Return the (set, way) currently holding paddr's line, else None."""
        paddr &= ~(WORD_BYTES - 1)
        set_idx = paddr // self.line_bytes % self.sets
        tag = paddr // (self.line_bytes * self.sets)
        for way in range(self.ways):
            if (
                self._valid[set_idx] >> way & 1
                and self._tags[set_idx][way] == tag
                and self.modes[way] == MODE_CACHE
            ):
                return set_idx, way
        return None

    def spm_word(self, way, set_idx, word):
        """Directly read one SPM storage word (testing aid, no latency)."""
        if self.modes[way] != MODE_SPM:
            raise ValueError("way %d is not in SPM mode" % way)
        return self._data[set_idx][way][word]

    def tag_state(self):
        """Deterministic fingerprint of tags, valid/dirty bits and the
        per-set replacement bits.  Stale tags of invalid ways are included,
        so this is meant for before/after comparisons on one instance, not
        for comparing independently built caches."""
        return (
            tuple(tuple(t) for t in self._tags),
            tuple(self._valid),
            tuple(self._dirty),
            tuple(t.snapshot_bits() for t in self._trees),
        )
