"""
Structural validation of a whole IR.

validate() never raises on a malformed IR: every broken invariant comes back
as a Violation, in a deterministic order (tree walk order, then CFG vertices
by UUID bytes, then AuxData owners in tree order and labels sorted).
"""
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Tuple, Union
from uuid import UUID

import structlog

import auxdata
from ir import (
    ByteBlock,
    ByteInterval,
    CodeBlock,
    Ir,
    Module,
    Node,
    ProxyBlock,
    SymAddrAddr,
    Symbol,
)

log = structlog.get_logger()


class ViolationCode(Enum):
    DuplicateUuid = "DuplicateUuid"
    DanglingReference = "DanglingReference"
    BlockOutOfRange = "BlockOutOfRange"
    ContentsExceedSize = "ContentsExceedSize"
    SymExprOutOfRange = "SymExprOutOfRange"
    CfgEndpointNotCodeOrProxy = "CfgEndpointNotCodeOrProxy"
    AuxDataDecodeFailure = "AuxDataDecodeFailure"
    FunctionTableInconsistent = "FunctionTableInconsistent"
    ScaleZero = "ScaleZero"


OFFSET_KEYED = ("comments", "padding", "seEncodings")


Location = Union[UUID, Tuple[UUID, int]]


@dataclass(frozen=True)
class Violation:
    code: ViolationCode
    location: Location
    message: str

    def __str__(self) -> str:
        if isinstance(self.location, tuple):
            where = f"{self.location[0]}+{self.location[1]:#x}"
        else:
            where = str(self.location)
        return f"{self.code.value} {where}: {self.message}"


def _check_intervals(ir: Ir, nodes: Dict[UUID, Node]) -> Iterable[Violation]:
    for module in ir.modules:
        for interval in module.byte_intervals():
            if len(interval.contents) > interval.size:
                yield Violation(
                    ViolationCode.ContentsExceedSize, interval.uuid,
                    f"contents hold {len(interval.contents)} bytes but size is {interval.size}",
                )
            for block in interval.blocks:
                if block.offset + block.size > interval.size:
                    yield Violation(
                        ViolationCode.BlockOutOfRange, block.uuid,
                        f"block [{block.offset}, {block.offset + block.size}) exceeds interval size {interval.size}",
                    )
            for offset in sorted(interval.sym_exprs):
                expr = interval.sym_exprs[offset]
                where = (interval.uuid, offset)
                if offset >= interval.size:
                    yield Violation(
                        ViolationCode.SymExprOutOfRange, where,
                        f"symbolic expression offset outside interval size {interval.size}",
                    )
                for symbol in expr.symbols:
                    if not isinstance(nodes.get(symbol), Symbol):
                        yield Violation(
                            ViolationCode.DanglingReference, where,
                            f"symbolic expression names missing symbol {symbol}",
                        )
                if isinstance(expr, SymAddrAddr) and expr.scale == 0:
                    yield Violation(ViolationCode.ScaleZero, where, "symbol difference scaled by zero")


def _check_symbols(ir: Ir, nodes: Dict[UUID, Node]) -> Iterable[Violation]:
    for module in ir.modules:
        for symbol in module.symbols:
            referent = symbol.referent
            if referent is not None and not isinstance(nodes.get(referent), (ByteBlock, ProxyBlock)):
                yield Violation(
                    ViolationCode.DanglingReference, symbol.uuid,
                    f"symbol {symbol.name!r} refers to missing block {referent}",
                )


def _check_cfg(ir: Ir, nodes: Dict[UUID, Node]) -> Iterable[Violation]:
    for vertex in sorted(ir.cfg.vertices, key=lambda u: u.bytes):
        if not isinstance(nodes.get(vertex), (CodeBlock, ProxyBlock)):
            kind = type(nodes[vertex]).__name__ if vertex in nodes else "nothing"
            yield Violation(
                ViolationCode.CfgEndpointNotCodeOrProxy, vertex,
                f"CFG node resolves to {kind}",
            )


def table_references(label: str, value) -> Iterable[Tuple[UUID, type]]:
    """(uuid, expected entity type) pairs a decoded sanctioned table refers to."""
    if label in ("functionBlocks", "functionEntries"):
        for blocks in value.values():
            for b in blocks:
                yield b, CodeBlock
    elif label == "functionNames":
        for symbol in value.values():
            yield symbol, Symbol
    elif label in ("alignment", "types"):
        for block in value:
            yield block, ByteBlock
    elif label == "symbolForwarding":
        for source, target in value.items():
            yield source, Symbol
            yield target, Symbol
    elif label in OFFSET_KEYED:
        for offset in value:
            yield offset.element_id, (ByteBlock, ByteInterval)


def _check_displacements(label: str, table, nodes: Dict[UUID, Node]) -> Iterable[Violation]:
    # An Offset may point one past the end (padding after an interval), never further.
    for offset in sorted(table, key=lambda o: (o.element_id.bytes, o.displacement)):
        element = nodes.get(offset.element_id)
        if isinstance(element, (ByteBlock, ByteInterval)) and offset.displacement > element.size:
            yield Violation(
                ViolationCode.BlockOutOfRange, (offset.element_id, offset.displacement),
                f"table {label!r} points past the end of a {element.size}-byte {type(element).__name__}",
            )


def _check_aux_data(owner: Union[Ir, Module], nodes: Dict[UUID, Node]) -> Iterable[Violation]:
    decoded = {}
    for label in sorted(owner.aux_data):
        spec = auxdata.known_spec(label)
        if spec is None:
            continue
        entry = owner.aux_data[label]
        try:
            if auxdata.parse_type_spec(entry.type_spec) != spec:
                raise auxdata.SchemaMismatch(f"stored as {entry.type_spec}, expected {spec}")
            decoded[label] = auxdata.decode_value(spec, entry.data)
        except auxdata.AuxDataError as e:
            yield Violation(ViolationCode.AuxDataDecodeFailure, owner.uuid, f"table {label!r}: {e}")
            continue
        for ref, expected in table_references(label, decoded[label]):
            if not isinstance(nodes.get(ref), expected):
                wanted = " or ".join(t.__name__ for t in (expected if isinstance(expected, tuple) else (expected,)))
                yield Violation(
                    ViolationCode.DanglingReference, owner.uuid,
                    f"table {label!r} entry {ref} is not a {wanted}",
                )
        if label in OFFSET_KEYED:
            yield from _check_displacements(label, decoded[label], nodes)

    blocks = decoded.get("functionBlocks", {})
    for function in sorted(decoded.get("functionEntries", {}), key=lambda u: u.bytes):
        entries = decoded["functionEntries"][function]
        if function not in blocks:
            yield Violation(
                ViolationCode.FunctionTableInconsistent, function,
                "function has entries but no functionBlocks row",
            )
        elif not entries <= blocks[function]:
            yield Violation(
                ViolationCode.FunctionTableInconsistent, function,
                f"{len(entries - blocks[function])} entry block(s) missing from functionBlocks",
            )


def validate(ir: Ir) -> List[Violation]:
    violations: List[Violation] = []
    nodes: Dict[UUID, Node] = {}
    counts: Counter = Counter()
    for node in ir.walk():
        counts[node.uuid] += 1
        if counts[node.uuid] == 2:
            violations.append(Violation(
                ViolationCode.DuplicateUuid, node.uuid,
                "UUID shared by more than one entity",
            ))
        nodes.setdefault(node.uuid, node)

    violations.extend(_check_intervals(ir, nodes))
    violations.extend(_check_symbols(ir, nodes))
    violations.extend(_check_cfg(ir, nodes))
    for owner in (ir, *ir.modules):
        violations.extend(_check_aux_data(owner, nodes))

    if violations:
        log.info(event="validate", violations=len(violations))
    return violations
