"""
Interprocedural control-flow graph.

One graph spans all code in an IR. Nodes are CodeBlock and ProxyBlock UUIDs;
edges carry a three-dimensional label. Storage is a networkx MultiDiGraph
keyed by the packed label code, so parallel edges between the same pair are
allowed as long as their labels differ.
"""
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Iterable, List, Optional, Set
from uuid import UUID

import networkx as nx
import structlog

log = structlog.get_logger()


class CfgError(ValueError):
    pass


class EndpointNotCodeOrProxy(CfgError):
    def __init__(self, uuid: UUID):
        super().__init__(f"CFG endpoint {uuid} is not a CodeBlock or ProxyBlock.")
        self.uuid = uuid


class DuplicateEdge(CfgError):
    pass


class SecondFallthrough(CfgError):
    pass


class InvalidEdgeLabel(CfgError):
    pass


class BadEdgeLabelCode(CfgError):
    pass


class EdgeKind(IntEnum):
    Fallthrough = 0
    Branch = 1
    Call = 2
    Return = 3
    Syscall = 4
    Sysret = 5


@dataclass(frozen=True)
class EdgeLabel:
    kind: EdgeKind
    conditional: bool = False
    direct: bool = True

    def __str__(self) -> str:
        text = self.kind.name
        if self.conditional:
            text += ",cond"
        if not self.direct:
            text += ",indirect"
        return text


@dataclass(frozen=True)
class Edge:
    source: UUID
    target: UUID
    label: EdgeLabel

    def sort_key(self):
        return (self.source.bytes, self.target.bytes, edge_label_code(self.label))


def edge_label_code(label: EdgeLabel) -> int:
    """bit0 conditional, bit1 direct, bits2-4 kind ordinal."""
    return int(label.conditional) | (int(label.direct) << 1) | (int(label.kind) << 2)


def decode_edge_label(code: int) -> EdgeLabel:
    if not 0 <= code <= 0xFF:
        raise BadEdgeLabelCode(f"Edge label code {code} does not fit in a byte.")
    ordinal = (code >> 2) & 0b111
    if code >> 5 or ordinal > max(EdgeKind):
        raise BadEdgeLabelCode(f"Edge label code {code:#010b} has no valid kind.")
    return EdgeLabel(kind=EdgeKind(ordinal), conditional=bool(code & 1), direct=bool(code & 2))


class Ipcfg:
    """
    The graph itself. `node_kind` resolves a UUID to the entity it names
    (or None); the owning Ir installs it so endpoint typing can be checked.
    """

    def __init__(self, node_kind: Optional[Callable[[UUID], object]] = None):
        self._graph = nx.MultiDiGraph()
        self.node_kind = node_kind

    @property
    def vertices(self) -> Set[UUID]:
        return set(self._graph.nodes)

    def edges(self) -> List[Edge]:
        """All edges in canonical order."""
        found = [
            Edge(u, v, decode_edge_label(code)) for u, v, code in self._graph.edges(keys=True)
        ]
        return sorted(found, key=Edge.sort_key)

    def __len__(self) -> int:
        return self._graph.number_of_edges()

    def _insert(self, edge: Edge) -> None:
        # Unchecked insertion; wire.load(strict=False) needs malformed graphs in memory.
        self._graph.add_edge(edge.source, edge.target, key=edge_label_code(edge.label))

    def _drop_vertex(self, v: UUID) -> None:
        if v in self._graph:
            self._graph.remove_node(v)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Ipcfg):
            return NotImplemented
        return self.vertices == other.vertices and self.edges() == other.edges()


def _is_cfg_node(cfg: Ipcfg, uuid: UUID) -> bool:
    if cfg.node_kind is None:
        return True
    node = cfg.node_kind(uuid)
    return bool(getattr(node, "is_cfg_node", False))


def add_vertex(cfg: Ipcfg, v: UUID) -> None:
    if not _is_cfg_node(cfg, v):
        raise EndpointNotCodeOrProxy(v)
    cfg._graph.add_node(v)


def check_edge_shape(cfg: Ipcfg, src: UUID, label: EdgeLabel) -> None:
    """Raise if adding an edge labelled `label` out of `src` would break the fallthrough rules."""
    if label.kind != EdgeKind.Fallthrough:
        return
    if label.conditional or not label.direct:
        raise InvalidEdgeLabel(f"Fallthrough edges are unconditional and direct, got {label}.")
    if src in cfg._graph:
        for _, _, key in cfg._graph.out_edges(src, keys=True):
            if decode_edge_label(key).kind == EdgeKind.Fallthrough:
                raise SecondFallthrough(f"{src} already has an outgoing Fallthrough edge.")


def check_shape(cfg: Ipcfg) -> None:
    """Raise on the first edge of an already-built graph that breaks the fallthrough rules."""
    fallthrough_sources: Set[UUID] = set()
    for edge in cfg.edges():
        if edge.label.kind != EdgeKind.Fallthrough:
            continue
        if edge.label.conditional or not edge.label.direct:
            raise InvalidEdgeLabel(f"Fallthrough edge {edge.source} -> {edge.target} is labelled {edge.label}.")
        if edge.source in fallthrough_sources:
            raise SecondFallthrough(f"{edge.source} has more than one outgoing Fallthrough edge.")
        fallthrough_sources.add(edge.source)


def add_edge(cfg: Ipcfg, src: UUID, tgt: UUID, label: EdgeLabel) -> Edge:
    for endpoint in (src, tgt):
        if not _is_cfg_node(cfg, endpoint):
            raise EndpointNotCodeOrProxy(endpoint)
    if label.kind == EdgeKind.Fallthrough and (label.conditional or not label.direct):
        raise InvalidEdgeLabel(f"Fallthrough edges are unconditional and direct, got {label}.")
    code = edge_label_code(label)
    if cfg._graph.has_edge(src, tgt, key=code):
        raise DuplicateEdge(f"Edge {src} -> {tgt} [{label}] already present.")
    check_edge_shape(cfg, src, label)
    edge = Edge(src, tgt, label)
    cfg._insert(edge)
    log.debug(event="add_edge", source=str(src), target=str(tgt), label=str(label))
    return edge


def remove_edge(cfg: Ipcfg, e: Edge) -> bool:
    code = edge_label_code(e.label)
    if not cfg._graph.has_edge(e.source, e.target, key=code):
        return False
    # Endpoints stay: vertex lifetime follows the blocks, not the edges.
    cfg._graph.remove_edge(e.source, e.target, key=code)
    return True


def out_edges(cfg: Ipcfg, v: UUID) -> List[Edge]:
    if v not in cfg._graph:
        return []
    found = [Edge(u, t, decode_edge_label(k)) for u, t, k in cfg._graph.out_edges(v, keys=True)]
    return sorted(found, key=Edge.sort_key)


def in_edges(cfg: Ipcfg, v: UUID) -> List[Edge]:
    if v not in cfg._graph:
        return []
    found = [Edge(s, u, decode_edge_label(k)) for s, u, k in cfg._graph.in_edges(v, keys=True)]
    return sorted(found, key=Edge.sort_key)


def reachable(
    cfg: Ipcfg,
    entries: Iterable[UUID],
    follow: Callable[[EdgeLabel], bool] = lambda label: True,
) -> Set[UUID]:
    """Least fixed point of successor expansion through edges accepted by `follow`."""
    view = nx.subgraph_view(
        cfg._graph, filter_edge=lambda u, v, k: follow(decode_edge_label(k))
    )
    result = set(entries)
    for entry in list(result):
        if entry in view:
            result |= nx.descendants(view, entry)
    return result
