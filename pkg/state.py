from typing import TypedDict, Optional, Set, Literal
from uuid import UUID


class FunctionRecord(TypedDict):
    uuid: UUID
    blocks: Set[UUID]
    entries: Set[UUID]
    name_symbol: Optional[UUID]  # absent when functionNames has no row


class DiffEntry(TypedDict):
    kind: Literal["Added", "Removed", "Changed"]
    entity: str  # module, section, interval, block, proxy, symbol, symexpr, edge, auxdata, ir
    path: str
    detail: str


class IntervalPlacement(TypedDict):
    interval: UUID
    base: int
    size: int
