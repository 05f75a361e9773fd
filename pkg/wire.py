"""
Canonical binary serialization of a whole IR (".bir" files).

Layout (all integers little-endian, fixed width):

    header      "BIR\\0" then format version u8 = 1
    Ir          uuid, version u32, modules (u64 count + Module*), Ipcfg, aux_data
    Module      uuid, name, isa u8, file_format u8, preferred_base (u8 presence [+ u64]),
                sections, symbols, proxy_blocks (u64 count + uuid*), aux_data
    Section     uuid, name, flags (u64 count + sorted u8 ordinals), intervals
    ByteInterval uuid, address (presence [+ u64]), size u64, contents (u64 len + bytes),
                blocks (u64 count + [offset u64, tag u8 0=Code 1=Data, uuid, size u64]*),
                sym_exprs (u64 count + [offset u64, expr]* sorted by encoded offset)
    Symbol      uuid, name, tag u8 (0 value i64 | 1 referent uuid | 2 undefined)
    SymExpr     tag u8: 0 symbol uuid, offset i64
                        1 minuend uuid, subtrahend uuid, scale i64, offset i64
    Ipcfg       vertices (u64 count + sorted uuid*), edges (u64 count + sorted
                [source uuid, target uuid, label code u8]*)
    aux_data    u64 count + [label string, type spec string, payload bytes]*
                sorted by encoded label

Strings are u64 length + UTF-8. Sets and maps are sorted by the bytes of
their encoded key, so byte equality of two saves is structural equality.
"""
import struct
from typing import Dict, List, Optional
from uuid import UUID

import structlog

import auxdata
import config
from auxdata import ByteReader, ByteWriter
from ipcfg import (
    BadEdgeLabelCode,
    CfgError,
    Edge,
    Ipcfg,
    check_edge_shape,
    check_shape,
    decode_edge_label,
    edge_label_code,
)
from ir import (
    AuxDataEntry,
    ByteInterval,
    CodeBlock,
    DataBlock,
    FileFormat,
    Ir,
    Isa,
    Module,
    ProxyBlock,
    Section,
    SectionFlag,
    SymAddrAddr,
    SymAddrConst,
    Symbol,
    SymbolicExpression,
)
from validator import Violation, table_references, validate

log = structlog.get_logger()

MAGIC = b"BIR\x00"
FORMAT_VERSION = 1

_CODE, _DATA = 0, 1
_VALUE, _REFERENT, _UNDEFINED = 0, 1, 2
_CONST, _ADDR_ADDR = 0, 1


class WireError(ValueError):
    pass


class BadMagic(WireError):
    pass


class UnsupportedVersion(WireError):
    pass


class Truncated(WireError):
    def __init__(self, position: int):
        super().__init__(f"Truncated({position})")
        self.position = position


class TrailingData(WireError):
    def __init__(self, position: int):
        super().__init__(f"TrailingData({position})")
        self.position = position


class Malformed(WireError):
    """A field holds a value outside its domain (bad enum, bad tag, bad UTF-8, a second Fallthrough)."""

    def __init__(self, position: int, message: str):
        super().__init__(f"Malformed({position}): {message}")
        self.position = position


class DuplicateUuid(WireError):
    def __init__(self, uuid: UUID):
        super().__init__(f"DuplicateUuid({uuid})")
        self.uuid = uuid


class DanglingReference(WireError):
    def __init__(self, uuid: UUID):
        super().__init__(f"DanglingReference({uuid})")
        self.uuid = uuid


class MalformedTypeSpec(WireError):
    def __init__(self, label: str, reason: str = ""):
        super().__init__(f"MalformedTypeSpec({label!r}) {reason}".rstrip())
        self.label = label


class InvalidIr(WireError):
    def __init__(self, violations: List[Violation]):
        super().__init__(f"InvalidIr: {len(violations)} violation(s); first: {violations[0]}")
        self.violations = violations


# save

def _uuid_key(u: UUID) -> bytes:
    return u.bytes


def _canonical_payload(label: str, entry: AuxDataEntry) -> bytes:
    spec = auxdata.known_spec(label)
    if spec is None:
        return entry.data
    try:
        if auxdata.parse_type_spec(entry.type_spec) != spec:
            return entry.data
        return auxdata.encode_value(spec, auxdata.decode_value(spec, entry.data))
    except auxdata.AuxDataError:
        return entry.data


def _write_aux_data(w: ByteWriter, aux_data: Dict[str, AuxDataEntry]) -> None:
    rows = []
    for label, entry in aux_data.items():
        try:
            spec_text = str(auxdata.parse_type_spec(entry.type_spec))
        except auxdata.TypeSpecSyntaxError:
            spec_text = entry.type_spec
        rows.append((label.encode("utf-8"), label, spec_text, _canonical_payload(label, entry)))
    w.u64(len(rows))
    for _, label, spec_text, payload in sorted(rows, key=lambda r: struct.pack("<Q", len(r[0])) + r[0]):
        w.string(label)
        w.string(spec_text)
        w.blob(payload)


def _write_optional_u64(w: ByteWriter, value: Optional[int]) -> None:
    if value is None:
        w.u8(0)
    else:
        w.u8(1)
        w.u64(value)


def _write_sym_expr(w: ByteWriter, expr: SymbolicExpression) -> None:
    if isinstance(expr, SymAddrConst):
        w.u8(_CONST)
        w.uuid(expr.symbol)
        w.i64(expr.offset)
    else:
        w.u8(_ADDR_ADDR)
        w.uuid(expr.symbol_minuend)
        w.uuid(expr.symbol_subtrahend)
        w.i64(expr.scale)
        w.i64(expr.offset)


def _write_interval(w: ByteWriter, interval: ByteInterval) -> None:
    w.uuid(interval.uuid)
    _write_optional_u64(w, interval.address)
    w.u64(interval.size)
    w.blob(bytes(interval.contents))
    w.u64(len(interval.blocks))
    for block in interval.blocks:
        w.u64(block.offset)
        w.u8(_CODE if isinstance(block, CodeBlock) else _DATA)
        w.uuid(block.uuid)
        w.u64(block.size)
    w.u64(len(interval.sym_exprs))
    for offset in sorted(interval.sym_exprs, key=lambda o: struct.pack("<Q", o)):
        w.u64(offset)
        _write_sym_expr(w, interval.sym_exprs[offset])


def _write_symbol(w: ByteWriter, symbol: Symbol) -> None:
    w.uuid(symbol.uuid)
    w.string(symbol.name)
    if symbol.referent is not None:
        w.u8(_REFERENT)
        w.uuid(symbol.referent)
    elif symbol.value is not None:
        w.u8(_VALUE)
        w.i64(symbol.value)
    else:
        w.u8(_UNDEFINED)


def _write_module(w: ByteWriter, module: Module) -> None:
    w.uuid(module.uuid)
    w.string(module.name)
    w.u8(int(module.isa))
    w.u8(int(module.file_format))
    _write_optional_u64(w, module.preferred_base)
    w.u64(len(module.sections))
    for section in module.sections:
        w.uuid(section.uuid)
        w.string(section.name)
        flags = sorted(int(f) for f in section.flags)
        w.u64(len(flags))
        for f in flags:
            w.u8(f)
        w.u64(len(section.byte_intervals))
        for interval in section.byte_intervals:
            _write_interval(w, interval)
    w.u64(len(module.symbols))
    for symbol in module.symbols:
        _write_symbol(w, symbol)
    w.u64(len(module.proxy_blocks))
    for proxy in module.proxy_blocks:
        w.uuid(proxy.uuid)
    _write_aux_data(w, module.aux_data)


def _write_cfg(w: ByteWriter, cfg: Ipcfg) -> None:
    vertices = sorted(cfg.vertices, key=_uuid_key)
    w.u64(len(vertices))
    for v in vertices:
        w.uuid(v)
    edges = cfg.edges()
    w.u64(len(edges))
    for e in edges:
        w.uuid(e.source)
        w.uuid(e.target)
        w.u8(edge_label_code(e.label))


def save(ir: Ir, strict: Optional[bool] = None) -> bytes:
    """
    Serialize `ir`. In strict mode (default from BIR_STRICT_SAVE) an IR with
    validation violations is refused with InvalidIr, and a CFG that breaks
    the fallthrough rules with the ipcfg error that names the edge.
    """
    if strict is None:
        strict = config.get_strict_save()
    if strict:
        violations = validate(ir)
        if violations:
            raise InvalidIr(violations)
        check_shape(ir.cfg)
    w = ByteWriter()
    w.raw(MAGIC)
    w.u8(FORMAT_VERSION)
    w.uuid(ir.uuid)
    w.u32(ir.version)
    w.u64(len(ir.modules))
    for module in ir.modules:
        _write_module(w, module)
    _write_cfg(w, ir.cfg)
    _write_aux_data(w, ir.aux_data)
    data = w.getvalue()
    log.debug(event="save", modules=len(ir.modules), size=len(data), strict=strict)
    return data


# load

class _Loader:
    def __init__(self, data: bytes, strict: bool):
        self.r = ByteReader(data)
        self.strict = strict
        self.seen: Dict[UUID, int] = {}

    def _claim(self, uuid: UUID, position: int) -> UUID:
        if uuid in self.seen and self.strict:
            raise DuplicateUuid(uuid)
        self.seen.setdefault(uuid, position)
        return uuid

    def uuid_entity(self) -> UUID:
        position = self.r.pos
        return self._claim(self.r.uuid(), position)

    def enum(self, kind, what: str):
        position = self.r.pos
        raw = self.r.u8()
        try:
            return kind(raw)
        except ValueError:
            raise Malformed(position, f"{raw} is not a valid {what}")

    def optional_u64(self) -> Optional[int]:
        position = self.r.pos
        present = self.r.u8()
        if present > 1:
            raise Malformed(position, f"presence byte {present}")
        return self.r.u64() if present else None

    def aux_data(self) -> Dict[str, AuxDataEntry]:
        table: Dict[str, AuxDataEntry] = {}
        for _ in range(self.r.u64()):
            label = self.r.string()
            spec_text = self.r.string()
            payload = self.r.blob()
            try:
                spec_text = str(auxdata.parse_type_spec(spec_text))
            except auxdata.TypeSpecSyntaxError as e:
                raise MalformedTypeSpec(label, str(e))
            table[label] = AuxDataEntry(spec_text, payload)
        return table

    def sym_expr(self) -> SymbolicExpression:
        position = self.r.pos
        tag = self.r.u8()
        if tag == _CONST:
            return SymAddrConst(self.r.uuid(), self.r.i64())
        if tag == _ADDR_ADDR:
            return SymAddrAddr(self.r.uuid(), self.r.uuid(), self.r.i64(), self.r.i64())
        raise Malformed(position, f"symbolic expression tag {tag}")

    def interval(self) -> ByteInterval:
        interval = ByteInterval(uuid=self.uuid_entity())
        interval.address = self.optional_u64()
        interval.size = self.r.u64()
        interval.contents = bytearray(self.r.blob())
        for _ in range(self.r.u64()):
            offset = self.r.u64()
            position = self.r.pos
            tag = self.r.u8()
            if tag not in (_CODE, _DATA):
                raise Malformed(position, f"block tag {tag}")
            cls = CodeBlock if tag == _CODE else DataBlock
            block = cls(uuid=self.uuid_entity())
            block.size = self.r.u64()
            block.offset = offset
            block._parent = interval
            interval.blocks.append(block)
        for _ in range(self.r.u64()):
            offset = self.r.u64()
            interval.sym_exprs[offset] = self.sym_expr()
        return interval

    def symbol(self) -> Symbol:
        symbol = Symbol("", uuid=self.uuid_entity())
        symbol.name = self.r.string()
        position = self.r.pos
        tag = self.r.u8()
        if tag == _VALUE:
            symbol.payload = self.r.i64()
        elif tag == _REFERENT:
            symbol.payload = self.r.uuid()
        elif tag != _UNDEFINED:
            raise Malformed(position, f"symbol payload tag {tag}")
        return symbol

    def module(self) -> Module:
        module = Module("", uuid=self.uuid_entity())
        module.name = self.r.string()
        module.isa = self.enum(Isa, "ISA")
        module.file_format = self.enum(FileFormat, "file format")
        module.preferred_base = self.optional_u64()
        for _ in range(self.r.u64()):
            section = Section("", uuid=self.uuid_entity())
            section.name = self.r.string()
            section.flags = {self.enum(SectionFlag, "section flag") for _ in range(self.r.u64())}
            for _ in range(self.r.u64()):
                interval = self.interval()
                interval._parent = section
                section.byte_intervals.append(interval)
            section._parent = module
            module.sections.append(section)
        for _ in range(self.r.u64()):
            symbol = self.symbol()
            symbol._parent = module
            module.symbols.append(symbol)
        for _ in range(self.r.u64()):
            proxy = ProxyBlock(uuid=self.uuid_entity())
            proxy._parent = module
            module.proxy_blocks.append(proxy)
        module.aux_data = self.aux_data()
        return module

    def cfg(self, cfg: Ipcfg) -> None:
        for _ in range(self.r.u64()):
            cfg._graph.add_node(self.r.uuid())
        for _ in range(self.r.u64()):
            source, target = self.r.uuid(), self.r.uuid()
            position = self.r.pos
            try:
                label = decode_edge_label(self.r.u8())
                if self.strict:
                    check_edge_shape(cfg, source, label)
            except (BadEdgeLabelCode, CfgError) as e:
                raise Malformed(position, str(e))
            cfg._insert(Edge(source, target, label))

    def ir(self) -> Ir:
        if self.r.take(4) != MAGIC:
            raise BadMagic(f"BadMagic: expected {MAGIC!r}")
        version = self.r.u8()
        if version != FORMAT_VERSION:
            raise UnsupportedVersion(f"UnsupportedVersion({version})")
        ir = Ir(uuid=self.uuid_entity())
        ir.version = self.r.u32()
        for _ in range(self.r.u64()):
            module = self.module()
            module._parent = ir
            ir.modules.append(module)
        self.cfg(ir.cfg)
        ir.aux_data = self.aux_data()
        if self.r.remaining:
            raise TrailingData(self.r.pos)
        return ir


def _build_index(ir: Ir) -> None:
    for node in ir.walk():
        ir._index.setdefault(node.uuid, node)


def _check_references(ir: Ir) -> None:
    for module in ir.modules:
        for symbol in module.symbols:
            if symbol.referent is not None and ir.get_by_uuid(symbol.referent) is None:
                raise DanglingReference(symbol.referent)
        for interval in module.byte_intervals():
            for offset in sorted(interval.sym_exprs):
                for s in interval.sym_exprs[offset].symbols:
                    if ir.get_by_uuid(s) is None:
                        raise DanglingReference(s)
    for v in sorted(ir.cfg.vertices, key=_uuid_key):
        if ir.get_by_uuid(v) is None:
            raise DanglingReference(v)
    for owner in (ir, *ir.modules):
        for label in sorted(owner.aux_data):
            spec = auxdata.known_spec(label)
            if spec is None:
                continue
            entry = owner.aux_data[label]
            try:
                if auxdata.parse_type_spec(entry.type_spec) != spec:
                    continue
                value = auxdata.decode_value(spec, entry.data)
            except auxdata.AuxDataError:
                # Undecodable tables load; validate() reports them.
                continue
            for ref, expected in table_references(label, value):
                if not isinstance(ir.get_by_uuid(ref), expected):
                    raise DanglingReference(ref)


def load(data: bytes, strict: bool = True) -> Ir:
    """
    Rebuild an IR from bytes. Strict loading also rejects duplicate UUIDs and
    references that do not resolve inside the file; lax loading keeps them so
    that validate() can report them.
    """
    loader = _Loader(bytes(data), strict)
    try:
        ir = loader.ir()
    except auxdata.Truncated as e:
        raise Truncated(e.position) from e
    except auxdata.ShapeMismatch as e:
        raise Malformed(loader.r.pos, str(e)) from e
    _build_index(ir)
    if strict:
        _check_references(ir)
    log.debug(event="load", modules=len(ir.modules), size=len(data), strict=strict)
    return ir


def canonicalize(data: bytes) -> bytes:
    return save(load(data, strict=False), strict=False)


def read_file(path: str, strict: bool = True) -> Ir:
    with open(path, "rb") as f:
        return load(f.read(), strict=strict)


def write_file(path: str, ir: Ir, strict: Optional[bool] = None) -> None:
    data = save(ir, strict=strict)
    with open(path, "wb") as f:
        f.write(data)
