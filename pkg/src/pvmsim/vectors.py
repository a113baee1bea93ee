"""Golden behavioral vectors for the constrained tree-PLRU victim walk.

All four exercises start from the same 8-slot tree state: the victim
path from the root targets slot 1 and the right half of the tree
targets slot 5 (undetermined bits are zero).  The newly translated page
is then installed over slot 1 -- i.e. the tree is touched away from
slot 1 -- and the *next* victim is selected under varying constraints:

  baseline-insert    no constraints; the walk crosses to the right half
                     and lands on slot 5.
  subtree-mask       two partitions of four slots; a single mask bit
                     gates a whole half of the tree.
  per-entry-mask     eight single-slot partitions; a slot whose mask
                     bit is clear is never selected.
  locked-entry       slot 5 locked; the walk diverts one level above
                     the dead end and picks slot 6 instead.

`run_reference_vectors()` evaluates them and is what both the test
suite and the `vectors` CLI subcommand call.
"""

from .plru import PlruTree

# Node bits, level order: [root, n1, n2, n3, n4, n5, n6].
# root=0 -> left, n1=0 -> n3, n3=1 -> slot 1  (victim path targets slot 1)
# n2=0 -> n5, n5=1 -> slot 5                  (right half targets slot 5)
START_BITS = (0, 0, 0, 1, 0, 1, 0)
# After touching slot 1, its root path points away from it.
BITS_AFTER_TOUCH1 = (1, 1, 0, 0, 0, 1, 0)
# After the subsequent unconstrained insert replaces slot 5.
BITS_AFTER_INSERT5 = (0, 1, 1, 0, 0, 0, 0)


def _case_baseline(out):
    tree = PlruTree(8, partition_count=1)
    tree.load_bits(START_BITS)
    tree.touch(1)
    out("bits after touch(1)", tree.snapshot_bits(), BITS_AFTER_TOUCH1)
    out("victim", tree.select_victim(0b1), 5)
    out("selection left state alone", tree.snapshot_bits(), BITS_AFTER_TOUCH1)
    out("insert returns the same victim", tree.insert(0b1), 5)
    out("bits after insert", tree.snapshot_bits(), BITS_AFTER_INSERT5)


def _case_subtree_mask(out):
    tree = PlruTree(8, partition_count=2)
    tree.load_bits(START_BITS)
    tree.touch(1)
    left = tree.select_victim(0b01)
    out("left-half mask keeps the walk left", left in (0, 1, 2, 3), True)
    out("left-half victim", left, 2)
    out("right-half victim", tree.select_victim(0b10), 5)


def _case_per_entry_mask(out):
    tree = PlruTree(8, partition_count=8)
    tree.load_bits(START_BITS)
    tree.touch(1)
    for slot in range(8):
        out("single-slot mask -> that slot (%d)" % slot, tree.select_victim(1 << slot), slot)
    # Clearing only slot 5's bit protects it: the walk diverts to slot 6,
    # exactly as if slot 5 were locked.
    out("victim with slot 5 masked out", tree.select_victim(0b1101_1111), 6)


def _case_locked_entry(out):
    tree = PlruTree(8, partition_count=1)
    tree.load_bits(START_BITS)
    tree.set_lock(5)
    tree.touch(1)
    out("victim with slot 5 locked", tree.select_victim(0b1), 6)
    out("unlock restores the baseline victim", _unlocked_victim(tree), 5)


def _unlocked_victim(tree):
    tree.set_lock(5, False)
    try:
        return tree.select_victim(0b1)
    finally:
        tree.set_lock(5, True)


REFERENCE_VECTORS = (
    ("baseline-insert", _case_baseline),
    ("subtree-mask", _case_subtree_mask),
    ("per-entry-mask", _case_per_entry_mask),
    ("locked-entry", _case_locked_entry),
)


def run_reference_vectors():
    """Run all vectors; returns a list of (name, passed, failure-details)."""
    results = []
    for name, fn in REFERENCE_VECTORS:
        failures = []

        def out(what, got, want):
            if got != want:
                failures.append("%s: got %r, want %r" % (what, got, want))

        fn(out)
        results.append((name, not failures, failures))
    return results


def main():  # used by `pvmsim vectors`
    results = run_reference_vectors()
    ok = True
    for name, passed, failures in results:
        print("%-16s %s" % (name, "pass" if passed else "FAIL"))
        for f in failures:
            print("    " + f)
        ok = ok and passed
    return 0 if ok else 1
