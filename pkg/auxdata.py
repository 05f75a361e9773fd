"""
AuxData: label -> (type spec text, encoded bytes) side tables on an Ir or Module.

The type spec grammar (canonical form has no whitespace):

    spec := "UUID" | "uint64" | "int64" | "string" | "Offset"
          | "sequence<" spec ">" | "set<" spec ">"
          | "mapping<" spec "," spec ">" | "tuple<" spec ("," spec)* ">"

Value encoding: integers little-endian fixed width, UUIDs as 16 raw bytes,
strings as u64 length + UTF-8, Offset as UUID then u64, containers as u64
count then elements. Set elements and mapping entries are sorted by the
bytes of their encoded key, which makes the encoding canonical.
"""
import struct
import uuid as uuidlib
from collections.abc import Mapping
from dataclasses import dataclass
from types import MappingProxyType
from typing import Any, Callable, Dict, List, Optional, Set, Tuple, Union
from uuid import UUID

import structlog

from ir import (
    AuxDataEntry,
    CodeBlock,
    DanglingReference,
    I64_MAX,
    I64_MIN,
    Ir,
    Module,
    Node,
    Offset,
    Symbol,
    U64_MAX,
    UnknownUuid,
)
from state import FunctionRecord

log = structlog.get_logger()


class AuxDataError(ValueError):
    pass


class TypeSpecSyntaxError(AuxDataError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class ShapeMismatch(AuxDataError):
    pass


class Truncated(AuxDataError):
    def __init__(self, position: int, wanted: int):
        super().__init__(f"Truncated input at position {position}: wanted {wanted} more bytes")
        self.position = position


class UnsortedCanonicalForm(AuxDataError):
    def __init__(self, position: int):
        super().__init__(f"Element at position {position} breaks canonical (sorted, unique) order")
        self.position = position


class SchemaMismatch(AuxDataError):
    pass


class DecodeFailure(AuxDataError):
    pass


class EntriesNotSubset(AuxDataError):
    pass


class ForwardingCycle(AuxDataError):
    pass


# Type specs

LEAVES = ("UUID", "uint64", "int64", "string", "Offset")
CONTAINERS = ("sequence", "set", "mapping", "tuple")
_ARITY = {"sequence": 1, "set": 1, "mapping": 2}


@dataclass(frozen=True)
class TypeSpec:
    kind: str
    args: Tuple["TypeSpec", ...] = ()

    def __str__(self) -> str:
        if not self.args:
            return self.kind
        return f"{self.kind}<{','.join(str(a) for a in self.args)}>"


UUID_T = TypeSpec("UUID")
UINT64 = TypeSpec("uint64")
INT64 = TypeSpec("int64")
STRING = TypeSpec("string")
OFFSET = TypeSpec("Offset")


def seq_of(t: TypeSpec) -> TypeSpec:
    return TypeSpec("sequence", (t,))


def set_of(t: TypeSpec) -> TypeSpec:
    return TypeSpec("set", (t,))


def mapping_of(k: TypeSpec, v: TypeSpec) -> TypeSpec:
    return TypeSpec("mapping", (k, v))


def tuple_of(*ts: TypeSpec) -> TypeSpec:
    return TypeSpec("tuple", tuple(ts))


class _SpecParser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _error(self, message: str, pos: int) -> TypeSpecSyntaxError:
        # Positions are byte offsets into the UTF-8 spec, as stored on the wire.
        return TypeSpecSyntaxError(message, len(self.text[:pos].encode("utf-8")))

    def _skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def _expect(self, ch: str) -> None:
        self._skip_ws()
        if self.pos >= len(self.text) or self.text[self.pos] != ch:
            found = "end of input" if self.pos >= len(self.text) else repr(self.text[self.pos])
            raise self._error(f"Expected {ch!r}, found {found}", self.pos)
        self.pos += 1

    def _word(self) -> str:
        self._skip_ws()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isalnum():
            self.pos += 1
        return self.text[start:self.pos]

    def parse(self) -> TypeSpec:
        spec = self.spec()
        self._skip_ws()
        if self.pos != len(self.text):
            raise self._error("Trailing characters after type spec", self.pos)
        return spec

    def spec(self) -> TypeSpec:
        self._skip_ws()
        start = self.pos
        word = self._word()
        if word in LEAVES:
            return TypeSpec(word)
        if word not in CONTAINERS:
            raise self._error(f"Unknown type {word!r}" if word else "Expected a type", start)
        self._expect("<")
        args = [self.spec()]
        arity = _ARITY.get(word)
        while arity is None or len(args) < arity:
            self._skip_ws()
            if arity is None and self.pos < len(self.text) and self.text[self.pos] == ">":
                break
            self._expect(",")
            args.append(self.spec())
        self._expect(">")
        return TypeSpec(word, tuple(args))


def parse_type_spec(text: Union[str, TypeSpec]) -> TypeSpec:
    if isinstance(text, TypeSpec):
        return text
    return _SpecParser(text).parse()


# Byte-level reader/writer shared with the wire format

class ByteWriter:
    def __init__(self):
        self.buf = bytearray()

    def u8(self, v: int) -> None:
        self.buf.append(v)

    def u32(self, v: int) -> None:
        self.buf += struct.pack("<I", v)

    def u64(self, v: int) -> None:
        self.buf += struct.pack("<Q", v)

    def i64(self, v: int) -> None:
        self.buf += struct.pack("<q", v)

    def uuid(self, v: UUID) -> None:
        self.buf += v.bytes

    def raw(self, v: bytes) -> None:
        self.buf += v

    def blob(self, v: bytes) -> None:
        self.u64(len(v))
        self.buf += v

    def string(self, v: str) -> None:
        self.blob(v.encode("utf-8"))

    def getvalue(self) -> bytes:
        return bytes(self.buf)


class ByteReader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise Truncated(self.pos, self.pos + n - len(self.data))
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self.take(8))[0]

    def uuid(self) -> UUID:
        return UUID(bytes=bytes(self.take(16)))

    def blob(self) -> bytes:
        return bytes(self.take(self.u64()))

    def string(self) -> str:
        start = self.pos
        raw = self.blob()
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ShapeMismatch(f"Invalid UTF-8 in string at position {start}: {e}")

    @property
    def remaining(self) -> int:
        return len(self.data) - self.pos


# Value codec

def _check_int(value: Any, lo: int, hi: int, spec: TypeSpec) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or not lo <= value <= hi:
        raise ShapeMismatch(f"{value!r} is not a valid {spec}")
    return value


def _encode(spec: TypeSpec, value: Any, w: ByteWriter) -> None:
    kind = spec.kind
    if kind == "UUID":
        if not isinstance(value, UUID):
            raise ShapeMismatch(f"{value!r} is not a UUID")
        w.uuid(value)
    elif kind == "uint64":
        w.u64(_check_int(value, 0, U64_MAX, spec))
    elif kind == "int64":
        w.i64(_check_int(value, I64_MIN, I64_MAX, spec))
    elif kind == "string":
        if not isinstance(value, str):
            raise ShapeMismatch(f"{value!r} is not a string")
        w.string(value)
    elif kind == "Offset":
        if not isinstance(value, Offset):
            raise ShapeMismatch(f"{value!r} is not an Offset")
        w.uuid(value.element_id)
        w.u64(_check_int(value.displacement, 0, U64_MAX, UINT64))
    elif kind == "sequence":
        if not isinstance(value, (list, tuple)):
            raise ShapeMismatch(f"{value!r} is not a sequence")
        w.u64(len(value))
        for item in value:
            _encode(spec.args[0], item, w)
    elif kind == "set":
        if not isinstance(value, (set, frozenset, list, tuple)):
            raise ShapeMismatch(f"{value!r} is not a set")
        items = sorted({encode_value(spec.args[0], item) for item in value})
        w.u64(len(items))
        for item in items:
            w.raw(item)
    elif kind == "mapping":
        if isinstance(value, Mapping):
            pairs = list(value.items())
        elif isinstance(value, (list, tuple)) and all(isinstance(p, tuple) and len(p) == 2 for p in value):
            pairs = list(value)
        else:
            raise ShapeMismatch(f"{value!r} is not a mapping")
        encoded = {}
        for k, v in pairs:
            encoded[encode_value(spec.args[0], k)] = encode_value(spec.args[1], v)
        w.u64(len(encoded))
        for k in sorted(encoded):
            w.raw(k)
            w.raw(encoded[k])
    elif kind == "tuple":
        if not isinstance(value, (list, tuple)) or len(value) != len(spec.args):
            raise ShapeMismatch(f"{value!r} is not a {len(spec.args)}-tuple")
        for sub, item in zip(spec.args, value):
            _encode(sub, item, w)
    else:
        raise ShapeMismatch(f"Unknown type spec kind {kind!r}")


def encode_value(spec: Union[str, TypeSpec], value: Any) -> bytes:
    w = ByteWriter()
    _encode(parse_type_spec(spec), value, w)
    return w.getvalue()


def _decode(spec: TypeSpec, r: ByteReader, strict: bool, hashable: bool = False) -> Any:
    kind = spec.kind
    if kind == "UUID":
        return r.uuid()
    if kind == "uint64":
        return r.u64()
    if kind == "int64":
        return r.i64()
    if kind == "string":
        return r.string()
    if kind == "Offset":
        return Offset(r.uuid(), r.u64())
    if kind == "sequence":
        items = [_decode(spec.args[0], r, strict, hashable) for _ in range(r.u64())]
        return tuple(items) if hashable else items
    if kind == "tuple":
        return tuple(_decode(sub, r, strict, hashable) for sub in spec.args)
    if kind in ("set", "mapping"):
        count = r.u64()
        previous: Optional[bytes] = None
        entries = []
        for _ in range(count):
            start = r.pos
            key = _decode(spec.args[0], r, strict, hashable=True)
            key_bytes = bytes(r.data[start:r.pos])
            if strict and previous is not None and key_bytes <= previous:
                raise UnsortedCanonicalForm(start)
            previous = key_bytes
            if kind == "mapping":
                entries.append((key, _decode(spec.args[1], r, strict, hashable)))
            else:
                entries.append(key)
        if kind == "set":
            return frozenset(entries) if hashable else set(entries)
        if hashable:
            return tuple(sorted(dict(entries).items(), key=lambda kv: encode_value(spec.args[0], kv[0])))
        return dict(entries)
    raise ShapeMismatch(f"Unknown type spec kind {kind!r}")


def decode_value(spec: Union[str, TypeSpec], data: bytes, strict: bool = False) -> Any:
    """
    Decode `data` under `spec`. Strict mode additionally rejects set elements
    and mapping keys that are not in canonical order.
    """
    r = ByteReader(data)
    value = _decode(parse_type_spec(spec), r, strict)
    if r.remaining:
        raise ShapeMismatch(f"{r.remaining} trailing bytes after value at position {r.pos}")
    return value


# Registry

SANCTIONED: Mapping = MappingProxyType({
    "functionBlocks": mapping_of(UUID_T, set_of(UUID_T)),
    "functionEntries": mapping_of(UUID_T, set_of(UUID_T)),
    "functionNames": mapping_of(UUID_T, UUID_T),
    "types": mapping_of(UUID_T, STRING),
    "alignment": mapping_of(UUID_T, UINT64),
    "comments": mapping_of(OFFSET, STRING),
    "symbolForwarding": mapping_of(UUID_T, UUID_T),
    "padding": mapping_of(OFFSET, UINT64),
})

# Defined by this repository rather than sanctioned for interchange.
REPOSITORY: Mapping = MappingProxyType({
    "seEncodings": mapping_of(OFFSET, UINT64),
})


def known_spec(label: str) -> Optional[TypeSpec]:
    return SANCTIONED.get(label) or REPOSITORY.get(label)


def label_status(label: str) -> str:
    if label in SANCTIONED:
        return "sanctioned"
    if label in REPOSITORY:
        return "repository"
    return "unsanctioned"


AuxOwner = Union[Ir, Module]


def _checked_spec(label: str, spec: Union[str, TypeSpec]) -> TypeSpec:
    parsed = parse_type_spec(spec)
    expected = known_spec(label)
    if expected is not None and parsed != expected:
        raise SchemaMismatch(f"Table {label!r} has schema {expected}, not {parsed}")
    return parsed


def get_table(owner: AuxOwner, label: str, spec: Union[str, TypeSpec]) -> Optional[Any]:
    parsed = _checked_spec(label, spec)
    entry = owner.aux_data.get(label)
    if entry is None:
        return None
    try:
        stored = parse_type_spec(entry.type_spec)
    except TypeSpecSyntaxError as e:
        raise DecodeFailure(f"Table {label!r} has a malformed type spec: {e}") from e
    if stored != parsed:
        raise SchemaMismatch(f"Table {label!r} is stored as {entry.type_spec}, not {parsed}")
    try:
        return decode_value(parsed, entry.data)
    except AuxDataError as e:
        raise DecodeFailure(f"Table {label!r} does not decode: {e}") from e


def set_table(owner: AuxOwner, label: str, spec: Union[str, TypeSpec], value: Any) -> None:
    parsed = _checked_spec(label, spec)
    owner.aux_data[label] = AuxDataEntry(str(parsed), encode_value(parsed, value))


def _known_table(owner: AuxOwner, label: str) -> Any:
    spec = known_spec(label)
    value = get_table(owner, label, spec)
    return value if value is not None else {}


# Functions (second-class: three joined tables keyed by a function UUID)

def _resolver(module: Module) -> Callable[[UUID], Optional[Node]]:
    ir = module.ir
    if ir is not None:
        return ir.get_by_uuid
    local = {node.uuid: node for node in module.walk()}
    return local.get


def make_function(module: Module, blocks: Set[UUID], entries: Set[UUID], name_symbol: UUID) -> UUID:
    blocks, entries = set(blocks), set(entries)
    if not entries <= blocks:
        missing = ", ".join(sorted(str(u) for u in entries - blocks))
        raise EntriesNotSubset(f"Entry blocks not in the function's blocks: {missing}")
    lookup = _resolver(module)
    for b in blocks:
        if not isinstance(lookup(b), CodeBlock):
            raise DanglingReference(b, "function code block")
    if not isinstance(lookup(name_symbol), Symbol):
        raise DanglingReference(name_symbol, "function name symbol")

    function = uuidlib.uuid4()
    function_blocks = _known_table(module, "functionBlocks")
    function_entries = _known_table(module, "functionEntries")
    function_names = _known_table(module, "functionNames")
    function_blocks[function] = blocks
    function_entries[function] = entries
    function_names[function] = name_symbol
    set_table(module, "functionBlocks", SANCTIONED["functionBlocks"], function_blocks)
    set_table(module, "functionEntries", SANCTIONED["functionEntries"], function_entries)
    set_table(module, "functionNames", SANCTIONED["functionNames"], function_names)
    log.debug(event="make_function", function=str(function), blocks=len(blocks), entries=len(entries))
    return function


def get_functions(module: Module) -> List[FunctionRecord]:
    function_blocks = _known_table(module, "functionBlocks")
    function_entries = _known_table(module, "functionEntries")
    function_names = _known_table(module, "functionNames")
    keys = set(function_blocks) | set(function_entries) | set(function_names)
    return [
        FunctionRecord(
            uuid=f,
            blocks=set(function_blocks.get(f, ())),
            entries=set(function_entries.get(f, ())),
            name_symbol=function_names.get(f),
        )
        for f in sorted(keys, key=lambda u: u.bytes)
    ]


# Symbol forwarding

def forward_symbol(module: Module, s: UUID) -> UUID:
    """Follow symbolForwarding to a fixed point; an unmapped symbol forwards to itself."""
    if not isinstance(_resolver(module)(s), Symbol):
        raise UnknownUuid(s)
    forwarding = _known_table(module, "symbolForwarding")
    visited = {s}
    current = s
    while current in forwarding:
        current = forwarding[current]
        if current in visited:
            raise ForwardingCycle(f"symbolForwarding cycles back to {current}")
        visited.add(current)
    return current


# Thin helpers over the other sanctioned tables

def set_alignment(module: Module, block: UUID, alignment: int) -> None:
    table = _known_table(module, "alignment")
    table[block] = alignment
    set_table(module, "alignment", SANCTIONED["alignment"], table)


def get_alignments(module: Module) -> Dict[UUID, int]:
    return _known_table(module, "alignment")


def set_data_type(module: Module, block: UUID, type_text: str) -> None:
    # Stored verbatim; interpreting C++ type specifiers is left to clients.
    table = _known_table(module, "types")
    table[block] = type_text
    set_table(module, "types", SANCTIONED["types"], table)


def get_data_types(module: Module) -> Dict[UUID, str]:
    return _known_table(module, "types")


def add_comment(module: Module, offset: Offset, text: str) -> None:
    table = _known_table(module, "comments")
    table[offset] = text
    set_table(module, "comments", SANCTIONED["comments"], table)


def get_comments(module: Module) -> Dict[Offset, str]:
    return _known_table(module, "comments")


def set_forwarding(module: Module, source: UUID, target: UUID) -> None:
    table = _known_table(module, "symbolForwarding")
    table[source] = target
    set_table(module, "symbolForwarding", SANCTIONED["symbolForwarding"], table)
