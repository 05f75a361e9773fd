"""
Rewriting primitives and the layout/relocation engine.

Blocks, symbols and edges refer to each other by UUID, so bytes can be split,
shifted and moved without breaking references. `layout` then assigns fresh
interval addresses (honoring the `alignment` table) and `build_image`
re-resolves every symbolic expression that has an encoding directive in the
`seEncodings` table and writes it into a flat memory image.
"""
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Dict, List, Mapping, Optional, Tuple
from uuid import UUID

import structlog

import auxdata
from ir import (
    ByteBlock,
    ByteInterval,
    Ir,
    Offset,
    OutOfRange,
    ProxyBlock,
    SectionFlag,
    SymAddrConst,
    SymbolicExpression,
    U64_MAX,
    UnknownUuid,
    module_of,
)
from state import IntervalPlacement

log = structlog.get_logger()

SE_ENCODINGS = "seEncodings"
# Offset-keyed tables whose interval-relative keys must follow the bytes.
OFFSET_TABLES = ("seEncodings", "comments", "padding")

AddressAssignment = Dict[UUID, int]


class RewriteError(ValueError):
    pass


class BlockStraddlesSplit(RewriteError):
    def __init__(self, block: UUID, at: int):
        super().__init__(f"Block {block} straddles split point {at}.")
        self.block = block


class ProxyNotMovable(RewriteError):
    pass


class AmbiguousSymExprOwnership(RewriteError):
    def __init__(self, interval: UUID, offset: int):
        super().__init__(
            f"Symbolic expression at {interval}+{offset:#x} lies inside more than one block."
        )
        self.interval = interval
        self.offset = offset


class AlignmentNotPowerOfTwo(RewriteError):
    def __init__(self, block: UUID, alignment: int):
        super().__init__(f"AlignmentNotPowerOfTwo: block {block} requests alignment {alignment}.")
        self.block = block


class UnsatisfiableAlignment(RewriteError):
    pass


class UnresolvedSymbol(RewriteError):
    def __init__(self, symbol: UUID):
        super().__init__(f"UnresolvedSymbol: no address for symbol {symbol}.")
        self.symbol = symbol


class ScaleZero(RewriteError):
    pass


class OverlappingIntervals(RewriteError):
    pass


class UnassignedInterval(RewriteError):
    pass


class EncodedValueOverflow(RewriteError):
    def __init__(self, interval: UUID, offset: int, value: int, width: int):
        super().__init__(
            f"EncodedValueOverflow at {interval}+{offset:#x}: {value:#x} does not fit {width} byte(s)."
        )
        self.interval = interval
        self.offset = offset


class InvalidDirective(RewriteError):
    pass


class Endianness(IntEnum):
    Little = 0
    Big = 1


@dataclass(frozen=True)
class EncodingDirective:
    """How a symbolic expression's value is written back: bits0-3 width, bit4 big-endian, bit5 pc-relative."""
    width: int
    endianness: Endianness = Endianness.Little
    pc_relative: bool = False

    def pack(self) -> int:
        if self.width not in (1, 2, 4, 8):
            raise InvalidDirective(f"Encoding width {self.width} is not 1, 2, 4 or 8.")
        return self.width | (int(self.endianness) << 4) | (int(self.pc_relative) << 5)

    @classmethod
    def unpack(cls, code: int) -> "EncodingDirective":
        width = code & 0xF
        if code >> 6 or width not in (1, 2, 4, 8):
            raise InvalidDirective(f"Encoding code {code:#x} is not a valid directive.")
        return cls(width, Endianness((code >> 4) & 1), bool(code & 0x20))

    @property
    def byteorder(self) -> str:
        return "little" if self.endianness == Endianness.Little else "big"


@dataclass
class Image:
    base: int
    data: bytes

    @property
    def end(self) -> int:
        return self.base + len(self.data)


def set_encoding(module, offset: Offset, directive: EncodingDirective) -> None:
    table = auxdata.get_table(module, SE_ENCODINGS, auxdata.REPOSITORY[SE_ENCODINGS]) or {}
    table[offset] = directive.pack()
    auxdata.set_table(module, SE_ENCODINGS, auxdata.REPOSITORY[SE_ENCODINGS], table)


def get_encodings(ir: Ir) -> Dict[Offset, EncodingDirective]:
    found: Dict[Offset, EncodingDirective] = {}
    for module in ir.modules:
        table = auxdata.get_table(module, SE_ENCODINGS, auxdata.REPOSITORY[SE_ENCODINGS]) or {}
        for offset, code in table.items():
            found[offset] = EncodingDirective.unpack(code)
    return found


def _interval(ir: Ir, uuid: UUID) -> ByteInterval:
    node = ir.get_by_uuid(uuid)
    if not isinstance(node, ByteInterval):
        raise UnknownUuid(uuid)
    return node


def _rewrite_offset_tables(ir: Ir, fn: Callable[[Offset], Optional[Offset]]) -> None:
    """
    Re-key every Offset-keyed table through `fn`; None drops the row. Rows
    that moved win over rows that stayed on the same key.
    """
    for owner in (ir, *ir.modules):
        for label in OFFSET_TABLES:
            spec = auxdata.known_spec(label)
            try:
                table = auxdata.get_table(owner, label, spec)
            except auxdata.AuxDataError:
                log.warning(event="offset_table_skipped", owner=str(owner.uuid), label=label)
                continue
            if not table:
                continue
            kept, moved = {}, {}
            for key, value in table.items():
                new_key = fn(key)
                if new_key is None:
                    continue
                (kept if new_key == key else moved)[new_key] = value
            kept.update(moved)
            if kept != table:
                auxdata.set_table(owner, label, spec, kept)


def split_interval(ir: Ir, interval: UUID, at: int) -> Tuple[UUID, UUID]:
    first = _interval(ir, interval)
    section = first.section
    if section is None:
        raise UnknownUuid(interval)
    if not 0 < at < first.size:
        raise OutOfRange(f"Split point {at} must lie strictly inside [0, {first.size}).")
    for block in first.blocks:
        if block.offset < at < block.offset + block.size:
            raise BlockStraddlesSplit(block.uuid, at)

    second = ByteInterval(
        size=first.size - at,
        contents=bytes(first.contents[at:]),
        address=first.address + at if first.address is not None else None,
    )
    section.add_byte_interval(second, index=section.byte_intervals.index(first) + 1)
    for block in [b for b in first.blocks if b.offset >= at]:
        first.blocks.remove(block)
        block._parent = second
        block.offset -= at
        second.blocks.append(block)
    for offset in [o for o in first.sym_exprs if o >= at]:
        second.sym_exprs[offset - at] = first.sym_exprs.pop(offset)
    del first.contents[at:]
    first.size = at

    def follow(key: Offset) -> Optional[Offset]:
        if key.element_id == first.uuid and key.displacement >= at:
            return Offset(second.uuid, key.displacement - at)
        return key

    _rewrite_offset_tables(ir, follow)
    log.debug(event="split_interval", interval=str(first.uuid), at=at, second=str(second.uuid))
    return first.uuid, second.uuid


def insert_bytes(ir: Ir, interval: UUID, at: int, payload: bytes) -> None:
    target = _interval(ir, interval)
    if not 0 <= at <= target.size:
        raise OutOfRange(f"Insertion point {at} outside [0, {target.size}].")
    n = len(payload)
    if len(target.contents) < at:
        target.contents.extend(bytes(at - len(target.contents)))
    target.contents[at:at] = payload
    target.size += n
    # Insertion lands before a block that starts exactly at `at`.
    for block in target.blocks:
        if block.offset >= at:
            block.offset += n
    target.sym_exprs = {(o + n if o >= at else o): e for o, e in target.sym_exprs.items()}

    def follow(key: Offset) -> Optional[Offset]:
        if key.element_id == target.uuid and key.displacement >= at:
            return Offset(target.uuid, key.displacement + n)
        return key

    _rewrite_offset_tables(ir, follow)
    log.debug(event="insert_bytes", interval=str(target.uuid), at=at, length=n)


def move_block(ir: Ir, block: UUID, dest_interval: UUID, dest_offset: int) -> None:
    node = ir.get_by_uuid(block)
    if node is None:
        raise UnknownUuid(block)
    if isinstance(node, ProxyBlock):
        raise ProxyNotMovable(f"ProxyBlock {block} has no bytes to move.")
    if not isinstance(node, ByteBlock) or node.byte_interval is None:
        raise UnknownUuid(block)
    source = node.byte_interval
    dest = _interval(ir, dest_interval)
    if dest_offset < 0 or dest_offset + node.size > dest.size:
        raise OutOfRange(
            f"Block of size {node.size} does not fit at {dest_offset} in interval of size {dest.size}."
        )

    lo, hi = node.offset, node.offset + node.size
    owned = sorted(o for o in source.sym_exprs if lo <= o < hi)
    for o in owned:
        for other in source.blocks:
            if other is not node and other.offset <= o < other.offset + other.size:
                raise AmbiguousSymExprOwnership(source.uuid, o)

    data = source.read(lo, node.size)
    carried = {o - lo: source.sym_exprs.pop(o) for o in owned}
    clobbered = [o for o in dest.sym_exprs if dest_offset <= o < dest_offset + node.size]
    if clobbered:
        log.warning(event="move_block_clobber", interval=str(dest.uuid), sym_exprs=len(clobbered))
    for o in clobbered:
        del dest.sym_exprs[o]
    dest.write(dest_offset, data)
    for rel, expr in carried.items():
        dest.sym_exprs[dest_offset + rel] = expr

    source.blocks.remove(node)
    node._parent = dest
    node.offset = dest_offset
    dest.blocks.append(node)

    def follow(key: Offset) -> Optional[Offset]:
        d = key.displacement
        if key.element_id == source.uuid and lo <= d < hi:
            return Offset(dest.uuid, dest_offset + d - lo)
        if key.element_id == dest.uuid and dest_offset <= d < dest_offset + node.size:
            return None
        return key

    _rewrite_offset_tables(ir, follow)
    log.debug(event="move_block", block=str(block), dest=str(dest.uuid), offset=dest_offset)


def _placement(interval: ByteInterval, constraints: List[Tuple[UUID, int, int]]) -> Tuple[int, int]:
    """(residue, modulus) every base of `interval` must satisfy; power-of-two alignments only."""
    if not constraints:
        return 0, 1
    _, anchor_offset, modulus = max(constraints, key=lambda c: c[2])
    residue = -anchor_offset % modulus
    for block, offset, alignment in constraints:
        if (residue + offset) % alignment:
            raise UnsatisfiableAlignment(
                f"Interval {interval.uuid}: block {block} at offset {offset} cannot be "
                f"{alignment}-aligned together with the interval's other aligned blocks."
            )
    return residue, modulus


def layout(ir: Ir, base: int) -> AddressAssignment:
    """
    Full relayout: intervals packed in stored order from `base`, each raised
    just enough to align all of its blocks that carry an `alignment` entry.
    """
    alignments: Dict[UUID, int] = {}
    for module in ir.modules:
        alignments.update(auxdata.get_alignments(module))
    for block, alignment in sorted(alignments.items(), key=lambda kv: kv[0].bytes):
        if alignment <= 0 or alignment & (alignment - 1):
            raise AlignmentNotPowerOfTwo(block, alignment)

    assignment: AddressAssignment = {}
    cursor = base
    for module in ir.modules:
        for interval in module.byte_intervals():
            constraints = [
                (b.uuid, b.offset, alignments[b.uuid]) for b in interval.blocks if b.uuid in alignments
            ]
            residue, modulus = _placement(interval, constraints)
            start = cursor + (residue - cursor) % modulus
            if start + interval.size > U64_MAX + 1:
                raise OutOfRange(f"Layout ran past the 64-bit address space at interval {interval.uuid}.")
            assignment[interval.uuid] = start
            cursor = start + interval.size
    log.info(event="layout", base=hex(base), intervals=len(assignment), end=hex(cursor))
    return assignment


def apply_layout(ir: Ir, assignment: AddressAssignment) -> List[IntervalPlacement]:
    """
    Pin intervals at their assigned bases and record each gap the layout
    left after an interval in its module's `padding` table.
    """
    placements: List[IntervalPlacement] = []
    previous: Optional[ByteInterval] = None
    for module in ir.modules:
        for interval in module.byte_intervals():
            if interval.uuid not in assignment:
                continue
            start = assignment[interval.uuid]
            interval.address = start
            placements.append(IntervalPlacement(interval=interval.uuid, base=start, size=interval.size))
            if previous is not None:
                gap = start - (previous.address + previous.size)
                if gap > 0:
                    owner = module_of(previous)
                    padding = auxdata.get_table(owner, "padding", auxdata.SANCTIONED["padding"]) or {}
                    padding[Offset(previous.uuid, previous.size)] = gap
                    auxdata.set_table(owner, "padding", auxdata.SANCTIONED["padding"], padding)
            previous = interval
    return placements


def symbol_addresses(ir: Ir, assignment: AddressAssignment) -> Dict[UUID, int]:
    """Addresses of every symbol resolvable under `assignment`."""
    addresses: Dict[UUID, int] = {}
    for module in ir.modules:
        for symbol in module.symbols:
            if symbol.value is not None:
                addresses[symbol.uuid] = symbol.value
                continue
            node = ir.get_by_uuid(symbol.referent) if symbol.referent is not None else None
            if isinstance(node, ByteBlock) and node.byte_interval is not None:
                base = assignment.get(node.byte_interval.uuid)
                if base is not None:
                    addresses[symbol.uuid] = base + node.offset
    return addresses


def _truncating_div(n: int, d: int) -> int:
    q = abs(n) // abs(d)
    return q if (n >= 0) == (d > 0) else -q


def eval_symexpr(expr: SymbolicExpression, addr_of: Mapping[UUID, int]) -> int:
    def address(symbol: UUID) -> int:
        if symbol not in addr_of:
            raise UnresolvedSymbol(symbol)
        return addr_of[symbol]

    if isinstance(expr, SymAddrConst):
        return address(expr.symbol) + expr.offset
    if expr.scale == 0:
        raise ScaleZero("Symbol difference scaled by zero.")
    difference = address(expr.symbol_minuend) - address(expr.symbol_subtrahend)
    return _truncating_div(difference, expr.scale) + expr.offset


def _placed_intervals(ir: Ir, assignment: AddressAssignment) -> List[Tuple[int, ByteInterval]]:
    placed = []
    for module in ir.modules:
        for section in module.sections:
            if SectionFlag.Loaded not in section.flags:
                continue
            for interval in section.byte_intervals:
                if interval.uuid not in assignment:
                    raise UnassignedInterval(f"Loaded interval {interval.uuid} has no assigned address.")
                placed.append((assignment[interval.uuid], interval))
    return placed


def build_image(ir: Ir, assignment: AddressAssignment) -> Image:
    placed = _placed_intervals(ir, assignment)
    if not placed:
        return Image(base=0, data=b"")

    ordered = sorted((p for p in placed if p[1].size), key=lambda p: p[0])
    for (a_base, a), (b_base, b) in zip(ordered, ordered[1:]):
        if a_base + a.size > b_base:
            raise OverlappingIntervals(f"Intervals {a.uuid} and {b.uuid} overlap at {b_base:#x}.")

    base = min(start for start, _ in placed)
    end = max(start + interval.size for start, interval in placed)
    buf = bytearray(end - base)
    for start, interval in placed:
        contents = bytes(interval.contents[:interval.size])
        buf[start - base:start - base + len(contents)] = contents

    addr_of = symbol_addresses(ir, assignment)
    encodings = get_encodings(ir)
    written = 0
    for start, interval in placed:
        for offset in sorted(interval.sym_exprs):
            directive = encodings.get(Offset(interval.uuid, offset))
            if directive is None:
                continue
            value = eval_symexpr(interval.sym_exprs[offset], addr_of)
            site = start + offset
            if directive.pc_relative:
                value -= site
            bits = 8 * directive.width
            if not -(1 << (bits - 1)) <= value < (1 << bits) or offset + directive.width > interval.size:
                raise EncodedValueOverflow(interval.uuid, offset, value, directive.width)
            encoded = (value & ((1 << bits) - 1)).to_bytes(directive.width, directive.byteorder)
            buf[site - base:site - base + directive.width] = encoded
            written += 1
    log.info(event="build_image", base=hex(base), size=len(buf), relocations=written)
    return Image(base=base, data=bytes(buf))


def decode_site(image: Image, address: int, directive: EncodingDirective, signed: bool = False) -> int:
    """Read back a value written by build_image at `address`."""
    start = address - image.base
    if start < 0 or start + directive.width > len(image.data):
        raise OutOfRange(f"Site {address:#x} outside image [{image.base:#x}, {image.end:#x}).")
    return int.from_bytes(image.data[start:start + directive.width], directive.byteorder, signed=signed)
