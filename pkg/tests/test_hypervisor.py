"""Tests for the VM-monitor model: planning, lock-slot decomposition, the
trap-time CSR protocol, and the iteration loop's reproducibility."""

import random
import statistics
import unittest

from pvmsim.hypervisor import (
    HypervisorConfig,
    IterationRecord,
    MappedRegion,
    ScenarioDef,
    SetupError,
    VmSpec,
    build_plan,
    build_system,
    iteration_seed,
    run_interference,
    run_iteration,
    run_regions,
    run_scenario,
    setup_scenario,
    trap_enter,
    trap_exit,
)
from pvmsim.memsys import LatencyConfig
from pvmsim.sv39 import PTE_A, PTE_D, PTE_R, PTE_W, PTE_X, SIZE_2M, SIZE_4K
from pvmsim.workload import InterferenceLoop, Region, Workload

from oracles import partition_leaves_ref

RW = PTE_R | PTE_W | PTE_A | PTE_D
RX = PTE_R | PTE_X | PTE_A | PTE_D

DATA_V = 0x0040_0000
CODE_V = 0x0060_0000
POOL_V = 0x00A0_0000

FULL = 0xFFFF
CRIT_MASK = 0x00FF
HYP_MASK = 0x0100
INTF_MASK = 0xFE00


def crit_vm(lock=False, spm=False, mask=CRIT_MASK, pages=4):
    regions = (
        MappedRegion(
            gvaddr=DATA_V,
            size=pages * SIZE_4K,
            flags=RW,
            lock=lock,
            backing="dspm" if spm else "ram",
        ),
        MappedRegion(
            gvaddr=CODE_V,
            size=2 * SIZE_4K,
            flags=RX,
            lock=lock,
            backing="ispm" if spm else "ram",
        ),
    )
    sweep = (
        Region(base=DATA_V, pages=pages, stride=512),
        Region(base=CODE_V, pages=2, stride=512, kind="ifetch"),
    )
    reverse = tuple(
        Region(base=r.base, pages=r.pages, stride=r.stride, order="reverse", kind=r.kind)
        for r in sweep
    )
    return VmSpec(
        name="crit",
        vmid=1,
        asid=1,
        partition_mask=mask,
        regions=regions,
        workload=Workload(prime=sweep, measure=reverse),
    )


def intf_vm(mask=INTF_MASK, pages=32):
    return VmSpec(
        name="intf",
        vmid=2,
        asid=2,
        partition_mask=mask,
        regions=(MappedRegion(gvaddr=POOL_V, size=pages * SIZE_4K, flags=RW),),
        workload=InterferenceLoop(base=POOL_V, pages=pages),
    )


def scenario(vms, *, name="unit", iterations=10, seed=1, spm_ways=0, jitter=0, hyp=None):
    return ScenarioDef(
        name=name,
        vms=vms,
        hyp=hyp or HypervisorConfig(partition_mask=HYP_MASK),
        latency=LatencyConfig(jitter=jitter),
        iterations=iterations,
        seed=seed,
        spm_ways=spm_ways,
    )


class IterationSeedTest(unittest.TestCase):
    def test_stable_and_distinct(self):
        a = iteration_seed(42, 7, "jitter")
        self.assertEqual(a, iteration_seed(42, 7, "jitter"))
        self.assertNotEqual(a, iteration_seed(42, 8, "jitter"))
        self.assertNotEqual(a, iteration_seed(42, 7, "workload"))
        self.assertNotEqual(a, iteration_seed(43, 7, "jitter"))
        self.assertTrue(0 <= a < 1 << 64)


class RegionAndSpecValidationTest(unittest.TestCase):
    def test_mapped_region_rules(self):
        with self.assertRaises(ValueError):  # superpage alignment
            MappedRegion(gvaddr=SIZE_4K, size=SIZE_2M, flags=RW, page_size=SIZE_2M)
        with self.assertRaises(ValueError):  # size granularity
            MappedRegion(gvaddr=0, size=SIZE_4K + 8, flags=RW)
        with self.assertRaises(ValueError):  # scratchpads hold base pages only
            MappedRegion(gvaddr=0, size=SIZE_2M, flags=RW, page_size=SIZE_2M, backing="dspm")
        with self.assertRaises(ValueError):
            MappedRegion(gvaddr=0, size=SIZE_4K, flags=RW, backing="flash")

    def test_vm_spec_rules(self):
        with self.assertRaises(ValueError):  # vmid 0 is the hypervisor's
            VmSpec(name="x", vmid=0, asid=1, partition_mask=1, regions=())
        with self.assertRaises(ValueError):
            VmSpec(name="x", vmid=1, asid=1, partition_mask=0, regions=())

    def test_scenario_rules(self):
        with self.assertRaises(ValueError):  # no measured VM
            scenario((intf_vm(),))
        with self.assertRaises(ValueError):  # two measured VMs
            a = crit_vm()
            b = VmSpec(
                name="crit2",
                vmid=3,
                asid=3,
                partition_mask=1,
                regions=a.regions,
                workload=a.workload,
            )
            scenario((a, b))
        with self.assertRaises(ValueError):  # duplicate ids
            scenario((crit_vm(), crit_vm()))
        with self.assertRaises(ValueError):
            ScenarioDef(name="x", vms=(crit_vm(),), spm_ways=9)


class PlanTest(unittest.TestCase):
    def test_superpage_region_needs_one_slot(self):
        vm = VmSpec(
            name="crit",
            vmid=1,
            asid=1,
            partition_mask=FULL,
            regions=(
                MappedRegion(
                    gvaddr=SIZE_2M, size=SIZE_2M, flags=RW, page_size=SIZE_2M, lock=True
                ),
            ),
            workload=Workload(
                prime=(Region(base=SIZE_2M, pages=1),),
                measure=(Region(base=SIZE_2M, pages=1),),
            ),
        )
        plan = build_plan(scenario((vm,)))
        self.assertEqual(len(plan.lock_chunks["d"]), 1)
        self.assertEqual(len(plan.lock_chunks["i"]), 0)
        self.assertEqual(plan.lock_chunks["d"][0][1].page_size, SIZE_2M)

    def test_base_page_region_needs_one_slot_per_page(self):
        plan = build_plan(scenario((crit_vm(lock=True),)))
        self.assertEqual(len(plan.lock_chunks["d"]), 4)  # 16 KiB of 4K data
        self.assertEqual(len(plan.lock_chunks["i"]), 2)  # executable side
        for _, chunk in plan.lock_chunks["i"]:
            self.assertTrue(chunk.executable)

    def test_lock_slot_budget_is_enforced(self):
        vm = crit_vm(lock=True, pages=9)  # 9 data PTEs > 8 slots
        with self.assertRaises(SetupError):
            build_plan(scenario((vm,)))

    def test_lock_order_is_first_come_first_served(self):
        plan = build_plan(scenario((crit_vm(lock=True), )))
        addrs = [chunk.gvaddr for _, chunk in plan.lock_chunks["d"]]
        self.assertEqual(addrs, sorted(addrs))
        self.assertEqual(addrs[0], DATA_V)

    def test_data_scratchpad_capacity(self):
        # 4 converted ways x (256 sets x 16 B) = 4 pages of data scratchpad.
        ok = crit_vm(spm=True, pages=4)
        build_plan(scenario((ok,), spm_ways=4))
        too_big = crit_vm(spm=True, pages=5)
        with self.assertRaises(SetupError):
            build_plan(scenario((too_big,), spm_ways=4))

    def test_instruction_scratchpad_capacity(self):
        # 4 converted ways x (128 sets x 16 B) = 2 pages of code scratchpad.
        vm = VmSpec(
            name="crit",
            vmid=1,
            asid=1,
            partition_mask=FULL,
            regions=(
                MappedRegion(gvaddr=CODE_V, size=3 * SIZE_4K, flags=RX, backing="ispm"),
            ),
            workload=Workload(prime=(), measure=(Region(base=CODE_V, pages=1, kind="ifetch"),)),
        )
        with self.assertRaises(SetupError):
            build_plan(scenario((vm,), spm_ways=4))

    def test_two_stage_tables_are_walkable(self):
        defn = scenario((crit_vm(), intf_vm()))
        plan = build_plan(defn)
        sys = build_system(defn, plan.memory_regions, None)
        state = setup_scenario(plan, sys)
        crit = state.measured_context
        out = sys.virtual_access(DATA_V, "read", crit)
        self.assertTrue(out.ok)
        self.assertGreater(out.walk_fetches, 0)  # cold two-stage walk happened

    def test_iteration_records_are_plain_data(self):
        rec = run_scenario(scenario((crit_vm(),), iterations=1))[0]
        self.assertIsInstance(rec, IterationRecord)
        self.assertEqual(rec.index, 0)
        self.assertGreater(rec.cycles, 0)


class TrapProtocolTest(unittest.TestCase):
    def setUp(self):
        self.defn = scenario((crit_vm(), intf_vm()))
        self.plan = build_plan(self.defn)
        self.sys = build_system(self.defn, self.plan.memory_regions, None)
        self.state = setup_scenario(self.plan, self.sys)
        self.crit = self.state.measured_context
        self.intf = self.state.interference_contexts[0]

    def boot(self):
        self.sys.csr.write_cur_part(HYP_MASK)
        trap_exit(self.state, self.crit)

    def test_boot_installs_critical_mask(self):
        self.boot()
        self.assertEqual(self.sys.csr.cur_part, CRIT_MASK)
        self.assertIs(self.state.current, self.crit)

    def test_enter_installs_hypervisor_mask_and_saves_current(self):
        self.boot()
        before = self.state.clock
        trap_enter(self.state)
        self.assertEqual(self.sys.csr.cur_part, HYP_MASK)
        self.assertEqual(self.sys.csr.last_part, CRIT_MASK)  # hardware save
        self.assertIs(self.state.interrupted, self.crit)
        self.assertIsNone(self.state.current)
        # Entry cost plus the handler's own footprint (16 reads minimum).
        self.assertGreaterEqual(
            self.state.clock - before, self.sys.latency.trap_entry_cycles + 16
        )

    def test_same_vm_resume_restores_saved_mask_without_switch_cost(self):
        self.boot()
        trap_enter(self.state)
        before = self.state.clock
        trap_exit(self.state, self.crit)
        self.assertEqual(self.sys.csr.cur_part, CRIT_MASK)
        self.assertEqual(self.state.clock - before, self.sys.latency.trap_exit_cycles)
        self.assertIs(self.state.current, self.crit)

    def test_cross_vm_exit_installs_next_mask_and_charges_switch(self):
        self.boot()
        trap_enter(self.state)
        before = self.state.clock
        trap_exit(self.state, self.intf)
        self.assertEqual(self.sys.csr.cur_part, INTF_MASK)
        self.assertEqual(
            self.state.clock - before,
            self.sys.latency.trap_exit_cycles + self.sys.latency.vm_switch_cycles,
        )
        self.assertIs(self.state.current, self.intf)


class LockRuntimeTest(unittest.TestCase):
    def test_locked_pages_hit_from_slots_without_fills(self):
        defn = scenario((crit_vm(lock=True),))
        plan = build_plan(defn)
        sys = build_system(defn, plan.memory_regions, None)
        state = setup_scenario(plan, sys)
        crit = state.measured_context
        out = sys.virtual_access(DATA_V + 8, "read", crit)
        self.assertTrue(out.ok)
        self.assertTrue(out.lock_hit)
        self.assertEqual(sys.dtlb.fills, 0)
        code = sys.virtual_access(CODE_V, "ifetch", crit)
        self.assertTrue(code.lock_hit)

    def test_full_lock_coverage_means_zero_measured_tlb_misses(self):
        defn = scenario((crit_vm(lock=True), intf_vm()), iterations=6)
        for rec in run_scenario(defn):
            self.assertEqual(rec.tlb_misses, 0)


class LeafOwnershipTest(unittest.TestCase):
    def test_disjoint_masks_keep_fills_in_their_partitions(self):
        defn = scenario((crit_vm(), intf_vm()))
        plan = build_plan(defn)
        sys = build_system(defn, plan.memory_regions, None)
        state = setup_scenario(plan, sys)
        crit = state.measured_context
        intf = state.interference_contexts[0]

        sys.csr.write_cur_part(HYP_MASK)
        trap_exit(state, crit)
        run_regions(sys, crit, crit.workload.prime)
        trap_enter(state)
        trap_exit(state, intf)
        run_interference(sys, intf, intf.workload, 20_000, random.Random(5))
        trap_enter(state)
        trap_exit(state, crit)
        run_regions(sys, crit, crit.workload.measure)

        allowed = {
            1: partition_leaves_ref(16, 16, CRIT_MASK),
            2: partition_leaves_ref(16, 16, INTF_MASK),
            0: partition_leaves_ref(16, 16, HYP_MASK),
        }
        checked = 0
        for tlb in (sys.itlb, sys.dtlb):
            for leaf, entry in enumerate(tlb.entries):
                if entry.valid:
                    self.assertIn(leaf, allowed[entry.asid])
                    checked += 1
        self.assertGreater(checked, 4)


class ReproducibilityTest(unittest.TestCase):
    def test_identical_runs(self):
        defn = scenario((crit_vm(), intf_vm()), iterations=5, jitter=5)
        self.assertEqual(run_scenario(defn), run_scenario(defn))

    def test_chunked_equals_serial(self):
        defn = scenario((crit_vm(), intf_vm()), iterations=6, jitter=5)
        serial = run_scenario(defn)
        chunked = run_scenario(defn, 0, 2) + run_scenario(defn, 2, 5) + run_scenario(defn, 5, 6)
        self.assertEqual(serial, chunked)

    def test_single_iteration_matches_batch(self):
        defn = scenario((crit_vm(), intf_vm()), iterations=4)
        plan = build_plan(defn)
        batch = run_scenario(defn)
        self.assertEqual(run_iteration(plan, 2), batch[2])

    def test_seed_changes_interference_outcomes(self):
        a = run_scenario(scenario((crit_vm(), intf_vm()), iterations=4, seed=1))
        b = run_scenario(scenario((crit_vm(), intf_vm()), iterations=4, seed=2))
        self.assertNotEqual(a, b)


class InterferencePhysicsTest(unittest.TestCase):
    """Small-scale versions of the headline effects; the experiment harness
    reproduces them at full scale."""

    def test_isolation_is_cycle_identical_without_jitter(self):
        records = run_scenario(scenario((crit_vm(),), iterations=8))
        self.assertEqual(len({r.cycles for r in records}), 1)

    def test_interference_raises_mean_and_spread(self):
        iso = run_scenario(scenario((crit_vm(mask=FULL),), iterations=12))
        noisy = run_scenario(
            scenario(
                (crit_vm(mask=FULL), intf_vm(mask=FULL)),
                iterations=12,
                hyp=HypervisorConfig(partition_mask=FULL),
            )
        )
        self.assertGreater(statistics.mean(r.cycles for r in noisy),
                           statistics.mean(r.cycles for r in iso))
        self.assertGreater(statistics.pstdev(r.cycles for r in noisy), 0)
        self.assertEqual(statistics.pstdev(r.cycles for r in iso), 0)

    def test_partitioning_reduces_measured_tlb_misses(self):
        shared = run_scenario(
            scenario(
                (crit_vm(mask=FULL), intf_vm(mask=FULL)),
                iterations=12,
                hyp=HypervisorConfig(partition_mask=FULL),
            )
        )
        parted = run_scenario(scenario((crit_vm(), intf_vm()), iterations=12))
        self.assertLess(
            statistics.mean(r.tlb_misses for r in parted),
            statistics.mean(r.tlb_misses for r in shared),
        )

    def test_locks_plus_scratchpad_restore_constant_time_under_attack(self):
        defn = scenario(
            (crit_vm(lock=True, spm=True, mask=FULL), intf_vm(mask=FULL)),
            iterations=8,
            spm_ways=4,
            jitter=6,
            hyp=HypervisorConfig(partition_mask=FULL),
        )
        records = run_scenario(defn)
        self.assertEqual(len({r.cycles for r in records}), 1)
        for rec in records:
            self.assertEqual(rec.tlb_misses, 0)
            self.assertEqual(rec.cache_misses, 0)


if __name__ == "__main__":
    unittest.main()
