"""
Core IR entities.

Ownership spine: Ir -> Module -> Section -> ByteInterval -> Code/Data blocks
and symbolic expressions. Modules also own Symbols and ProxyBlocks. Every
entity has a UUID; the owning Ir keeps an index from UUID to entity that is
updated whenever a subtree is attached or detached.

Mutators check what they can, but an IR that breaks invariants is still
representable; `validator.validate` is the authority on well-formedness.
"""
import uuid as uuidlib
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, Iterator, List, Optional, Set, Union
from uuid import UUID

import structlog

import config  # noqa: F401  (configures structlog on import)
from ipcfg import Ipcfg

log = structlog.get_logger()

U64_MAX = (1 << 64) - 1
I64_MIN = -(1 << 63)
I64_MAX = (1 << 63) - 1


class IrError(ValueError):
    pass


class UnknownUuid(IrError):
    def __init__(self, uuid: UUID):
        super().__init__(f"No entity with UUID {uuid}.")
        self.uuid = uuid


class ProxyHasNoBytes(IrError):
    pass


class OutOfRange(IrError):
    pass


class DuplicateUuid(IrError):
    def __init__(self, uuid: UUID):
        super().__init__(f"UUID {uuid} is already in use.")
        self.uuid = uuid


class DanglingReference(IrError):
    def __init__(self, uuid: UUID, what: str = "reference"):
        super().__init__(f"Dangling {what}: {uuid} does not resolve.")
        self.uuid = uuid


class Isa(IntEnum):
    Undefined = 0
    IA32 = 1
    X64 = 2
    ARM32 = 3
    ARM64 = 4
    MIPS32 = 5
    PPC32 = 6


class FileFormat(IntEnum):
    Undefined = 0
    Elf = 1
    Pe = 2
    Raw = 3


class SectionFlag(IntEnum):
    Readable = 0
    Writable = 1
    Executable = 2
    Loaded = 3
    Initialized = 4
    ThreadLocal = 5


@dataclass(frozen=True)
class Offset:
    """A displacement into a block or byte interval, referenced by UUID."""
    element_id: UUID
    displacement: int


@dataclass(frozen=True)
class SymAddrConst:
    symbol: UUID
    offset: int = 0

    @property
    def symbols(self) -> tuple:
        return (self.symbol,)


@dataclass(frozen=True)
class SymAddrAddr:
    """(minuend - subtrahend) / scale + offset, division truncating toward zero."""
    symbol_minuend: UUID
    symbol_subtrahend: UUID
    scale: int = 1
    offset: int = 0

    @property
    def symbols(self) -> tuple:
        return (self.symbol_minuend, self.symbol_subtrahend)


SymbolicExpression = Union[SymAddrConst, SymAddrAddr]


@dataclass
class AuxDataEntry:
    type_spec: str
    data: bytes


class Node:
    """Base for every UUID-carrying entity."""

    is_cfg_node = False

    def __init__(self, uuid: Optional[UUID] = None):
        self._uuid = uuid if uuid is not None else uuidlib.uuid4()
        self._parent: Optional["Node"] = None

    @property
    def uuid(self) -> UUID:
        return self._uuid

    @property
    def ir(self) -> Optional["Ir"]:
        node = self
        while node._parent is not None:
            node = node._parent
        return node if isinstance(node, Ir) else None

    def children(self) -> Iterator["Node"]:
        return iter(())

    def walk(self) -> Iterator["Node"]:
        yield self
        for child in self.children():
            yield from child.walk()

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self._uuid})"


def _attach(parent: Node, child: Node) -> None:
    """Parent `child` under `parent` and index its subtree if the parent lives in an Ir."""
    if child._parent is not None:
        raise IrError(f"{child!r} already belongs to {child._parent!r}.")
    ir = parent.ir
    if ir is not None:
        ir._index_subtree(child)
    child._parent = parent


def _detach(child: Node) -> None:
    ir = child.ir
    if ir is not None:
        ir._unindex_subtree(child)
    child._parent = None


class ByteBlock(Node):
    """A Code or Data block: a byte range inside one ByteInterval."""

    def __init__(self, size: int = 0, uuid: Optional[UUID] = None):
        super().__init__(uuid)
        if not 0 <= size <= U64_MAX:
            raise OutOfRange(f"Block size {size} outside the unsigned 64-bit range.")
        self.size = size
        self.offset = 0

    @property
    def byte_interval(self) -> Optional["ByteInterval"]:
        return self._parent if isinstance(self._parent, ByteInterval) else None


class CodeBlock(ByteBlock):
    is_cfg_node = True


class DataBlock(ByteBlock):
    pass


class ProxyBlock(Node):
    """A CFG node with no bytes, standing in for code outside the IR."""
    is_cfg_node = True


class Symbol(Node):
    """
    payload is an int (absolute value), a UUID (referent block), or None
    (undefined, e.g. an unresolved external).
    """

    def __init__(self, name: str, payload: Union[int, UUID, None] = None, uuid: Optional[UUID] = None):
        super().__init__(uuid)
        self.name = name
        self.payload = payload

    @property
    def referent(self) -> Optional[UUID]:
        return self.payload if isinstance(self.payload, UUID) else None

    @property
    def value(self) -> Optional[int]:
        return self.payload if isinstance(self.payload, int) else None


class ByteInterval(Node):
    def __init__(
        self,
        size: Optional[int] = None,
        contents: bytes = b"",
        address: Optional[int] = None,
        uuid: Optional[UUID] = None,
    ):
        super().__init__(uuid)
        self.address = address
        self.size = len(contents) if size is None else size
        self.contents = bytearray(contents)
        self.blocks: List[ByteBlock] = []
        self.sym_exprs: Dict[int, SymbolicExpression] = {}

    def children(self) -> Iterator[Node]:
        return iter(list(self.blocks))

    @property
    def section(self) -> Optional["Section"]:
        return self._parent if isinstance(self._parent, Section) else None

    def read(self, offset: int, size: int) -> bytes:
        data = bytes(self.contents[offset:offset + size])
        return data + bytes(size - len(data))

    def write(self, offset: int, data: bytes) -> None:
        """Overwrite bytes, zero-extending contents up to `offset` first."""
        end = offset + len(data)
        if end > self.size:
            raise OutOfRange(f"Write [{offset}, {end}) past interval size {self.size}.")
        if len(self.contents) < offset:
            self.contents.extend(bytes(offset - len(self.contents)))
        self.contents[offset:end] = data

    def add_sym_expr(self, offset: int, expr: SymbolicExpression) -> None:
        if not 0 <= offset < self.size:
            raise OutOfRange(f"Symbolic expression offset {offset} outside interval of size {self.size}.")
        self.sym_exprs[offset] = expr


class Section(Node):
    def __init__(self, name: str, flags: Optional[Set[SectionFlag]] = None, uuid: Optional[UUID] = None):
        super().__init__(uuid)
        self.name = name
        self.flags: Set[SectionFlag] = set(flags or ())
        self.byte_intervals: List[ByteInterval] = []

    def children(self) -> Iterator[Node]:
        return iter(list(self.byte_intervals))

    @property
    def module(self) -> Optional["Module"]:
        return self._parent if isinstance(self._parent, Module) else None

    def add_byte_interval(self, interval: ByteInterval, index: Optional[int] = None) -> ByteInterval:
        _attach(self, interval)
        if index is None:
            self.byte_intervals.append(interval)
        else:
            self.byte_intervals.insert(index, interval)
        return interval


class Module(Node):
    def __init__(
        self,
        name: str,
        isa: Isa = Isa.Undefined,
        file_format: FileFormat = FileFormat.Undefined,
        preferred_base: Optional[int] = None,
        uuid: Optional[UUID] = None,
    ):
        super().__init__(uuid)
        self.name = name
        self.isa = isa
        self.file_format = file_format
        self.preferred_base = preferred_base
        self.sections: List[Section] = []
        self.symbols: List[Symbol] = []
        self.proxy_blocks: List[ProxyBlock] = []
        self.aux_data: Dict[str, AuxDataEntry] = {}

    def children(self) -> Iterator[Node]:
        return iter([*self.sections, *self.symbols, *self.proxy_blocks])

    def add_section(self, section: Section) -> Section:
        _attach(self, section)
        self.sections.append(section)
        return section

    def add_symbol(self, symbol: Symbol) -> Symbol:
        _attach(self, symbol)
        self.symbols.append(symbol)
        return symbol

    def add_proxy_block(self, proxy: ProxyBlock) -> ProxyBlock:
        _attach(self, proxy)
        self.proxy_blocks.append(proxy)
        return proxy

    def byte_intervals(self) -> Iterator[ByteInterval]:
        for section in self.sections:
            yield from section.byte_intervals

    def byte_blocks(self) -> Iterator[ByteBlock]:
        for interval in self.byte_intervals():
            yield from interval.blocks


class Ir(Node):
    def __init__(self, version: int = 1, uuid: Optional[UUID] = None):
        super().__init__(uuid)
        if not 0 <= version < 1 << 32:
            raise OutOfRange(f"IR version {version} does not fit in 32 bits.")
        self.version = version
        self.modules: List[Module] = []
        self.cfg = Ipcfg(node_kind=self.get_by_uuid)
        self.aux_data: Dict[str, AuxDataEntry] = {}
        self._index: Dict[UUID, Node] = {self._uuid: self}

    def children(self) -> Iterator[Node]:
        return iter(list(self.modules))

    def add_module(self, module: Module) -> Module:
        _attach(self, module)
        self.modules.append(module)
        return module

    def get_by_uuid(self, uuid: UUID) -> Optional[Node]:
        return self._index.get(uuid)

    def _index_subtree(self, root: Node) -> None:
        nodes = list(root.walk())
        seen: Set[UUID] = set()
        for node in nodes:
            if node.uuid in self._index or node.uuid in seen:
                raise DuplicateUuid(node.uuid)
            seen.add(node.uuid)
        for node in nodes:
            self._index[node.uuid] = node

    def _unindex_subtree(self, root: Node) -> None:
        for node in root.walk():
            if self._index.get(node.uuid) is node:
                del self._index[node.uuid]


def new_ir(version: int = 1) -> Ir:
    return Ir(version=version)


def find_node(ir: Ir, id: UUID) -> Optional[Node]:
    return ir.get_by_uuid(id)


def _byte_block(ir: Ir, block: UUID) -> ByteBlock:
    node = ir.get_by_uuid(block)
    if node is None:
        raise UnknownUuid(block)
    if isinstance(node, ProxyBlock):
        raise ProxyHasNoBytes(f"ProxyBlock {block} has no bytes.")
    if not isinstance(node, ByteBlock) or node.byte_interval is None:
        raise UnknownUuid(block)
    return node


def block_bytes(ir: Ir, block: UUID) -> bytes:
    b = _byte_block(ir, block)
    return b.byte_interval.read(b.offset, b.size)


def block_address(ir: Ir, block: UUID) -> Optional[int]:
    b = _byte_block(ir, block)
    if b.byte_interval.address is None:
        return None
    return b.byte_interval.address + b.offset


def add_block(interval: ByteInterval, offset: int, block: ByteBlock) -> UUID:
    # Overlap with existing blocks is allowed.
    if offset < 0 or offset + block.size > interval.size:
        raise OutOfRange(
            f"Block [{offset}, {offset + block.size}) does not fit interval of size {interval.size}."
        )
    _attach(interval, block)
    block.offset = offset
    interval.blocks.append(block)
    return block.uuid


def remove_block(ir: Ir, block: UUID) -> None:
    """Detach a Code/Data/Proxy block, its CFG vertex and incident edges."""
    node = ir.get_by_uuid(block)
    if node is None:
        raise UnknownUuid(block)
    if isinstance(node, ProxyBlock):
        node._parent.proxy_blocks.remove(node)
    elif isinstance(node, ByteBlock) and node.byte_interval is not None:
        node.byte_interval.blocks.remove(node)
    else:
        raise IrError(f"{node!r} is not a block.")
    _detach(node)
    ir.cfg._drop_vertex(block)
    log.debug(event="remove_block", block=str(block))


def symbols_by_name(ir: Ir, name: str) -> List[Symbol]:
    return [s for m in ir.modules for s in m.symbols if s.name == name]


def module_of(node: Node) -> Optional[Module]:
    while node is not None and not isinstance(node, Module):
        node = node._parent
    return node
