"""SV39 address arithmetic and page-table-entry encoding shared by the TLB
and the walker.

Virtual addresses are 39 bits, translated by a three-level radix tree
with 9 index bits per level:

    38        30 29        21 20        12 11          0
   [  VPN[2]   |   VPN[1]   |   VPN[0]   | page offset ]

Leaves may sit at any level, giving 4 KiB, 2 MiB ("mega") and 1 GiB
("giga") pages.  A PTE packs the physical page number above ten flag /
reserved bits:

    pte = ppn << 10 | flags      flags: D A G U X W R V (bit 7 .. bit 0)
"""

PAGE_SHIFT = 12
PAGE_SIZE = 1 << PAGE_SHIFT
LEVELS = 3
INDEX_BITS = 9
VA_BITS = PAGE_SHIFT + LEVELS * INDEX_BITS  # 39

# Leaf page size when the walk stops at `level` (level 2 = root).
def level_size(level):
    return 1 << (PAGE_SHIFT + INDEX_BITS * level)


SIZE_4K = level_size(0)
SIZE_2M = level_size(1)
SIZE_1G = level_size(2)
PAGE_SIZES = (SIZE_4K, SIZE_2M, SIZE_1G)

PTE_V = 1 << 0
PTE_R = 1 << 1
PTE_W = 1 << 2
PTE_X = 1 << 3
PTE_U = 1 << 4
PTE_G = 1 << 5
PTE_A = 1 << 6
PTE_D = 1 << 7
PTE_FLAG_NAMES = "VRWXUGAD"  # bit 0 first

PTE_LEAF_MASK = PTE_R | PTE_W | PTE_X

# Virtual page numbers are 27 bits; the bits above them only carry the
# sign extension checked by is_canonical().
VPN_MASK = (1 << (LEVELS * INDEX_BITS)) - 1


def is_canonical(vaddr):
    """Bits 63:39 must replicate bit 38 (the sign-extension rule)."""
    upper = vaddr >> (VA_BITS - 1)
    return upper == 0 or upper == (1 << (64 - VA_BITS + 1)) - 1


def vpn_index(vaddr, level):
    """9-bit table index used at `level` of the walk."""
    return (vaddr >> (PAGE_SHIFT + INDEX_BITS * level)) & ((1 << INDEX_BITS) - 1)


def make_pte(ppn, flags):
    return (ppn << 10) | flags


def pte_ppn(pte):
    return pte >> 10


def pte_flags(pte):
    return pte & 0xFF


def pte_is_leaf(pte):
    return bool(pte & PTE_LEAF_MASK)


def flags_str(flags):
    """Compact dump form, highest bit first, '-' for clear bits."""
    return "".join(
        name if flags >> bit & 1 else "-"
        for bit, name in reversed(list(enumerate(PTE_FLAG_NAMES)))
    )
