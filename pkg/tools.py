"""
Command implementations behind main.py.

Every cmd_* returns (exit_code, text) and never raises for a domain or I/O
problem: 0 means ok, 1 a domain finding (violations, differences, a layout
that cannot be built), 2 a file that cannot be read or parsed.
"""
from typing import Dict, List, Optional, Tuple, Union
from uuid import UUID

import structlog
from tabulate import tabulate

import auxdata
import config
import wire
from ipcfg import EdgeKind
from ir import (
    CodeBlock,
    Ir,
    IrError,
    Module,
    ProxyBlock,
    SymAddrConst,
    SymbolicExpression,
)
from rewrite import RewriteError, build_image, layout
from state import DiffEntry
from validator import validate

log = structlog.get_logger()

Result = Tuple[int, str]


def _read(path: str) -> Ir:
    # Lax: malformed content is something to report, not a load failure.
    return wire.read_file(path, strict=False)


def _load_error(path: str, e: Exception) -> Result:
    log.info(event="load_failed", path=path, error=str(e))
    return 2, f"Error: {path}: {e}"


def cmd_validate(path: str) -> Result:
    try:
        ir = _read(path)
    except (OSError, wire.WireError) as e:
        return _load_error(path, e)
    violations = validate(ir)
    return (1 if violations else 0), "\n".join(str(v) for v in violations)


# stats

def _owners(ir: Ir) -> List[Tuple[str, Union[Ir, Module]]]:
    return [("ir", ir)] + [(f"module:{m.name}", m) for m in ir.modules]


def cmd_stats(path: str) -> Result:
    try:
        ir = _read(path)
    except (OSError, wire.WireError) as e:
        return _load_error(path, e)

    blocks = [b for m in ir.modules for b in m.byte_blocks()]
    intervals = [i for m in ir.modules for i in m.byte_intervals()]
    edges = ir.cfg.edges()
    counts = [
        ("modules", len(ir.modules)),
        ("sections", sum(len(m.sections) for m in ir.modules)),
        ("byte_intervals", len(intervals)),
        ("code_blocks", sum(isinstance(b, CodeBlock) for b in blocks)),
        ("data_blocks", sum(not isinstance(b, CodeBlock) for b in blocks)),
        ("proxy_blocks", sum(len(m.proxy_blocks) for m in ir.modules)),
        ("symbols", sum(len(m.symbols) for m in ir.modules)),
        ("sym_exprs", sum(len(i.sym_exprs) for i in intervals)),
        ("cfg_vertices", len(ir.cfg.vertices)),
        ("cfg_edges", len(edges)),
    ]
    counts += [(kind.name, sum(e.label.kind == kind for e in edges)) for kind in EdgeKind]

    rows = []
    for owner_name, owner in _owners(ir):
        for label in sorted(owner.aux_data):
            rows.append([owner_name, label, len(owner.aux_data[label].data), auxdata.label_status(label)])
    counts.append(("aux_data", len(rows)))

    text = "\n".join(f"{key}: {value}" for key, value in counts)
    if rows:
        text += "\n\n" + tabulate(rows, headers=["owner", "label", "bytes", "status"], tablefmt="plain")
    return 0, text


# dump

def _hex(data: bytes, limit: int) -> str:
    if len(data) <= limit:
        return data.hex(" ")
    head = limit // 2
    return f"{data[:head].hex(' ')} .. {data[len(data) - (limit - head):].hex(' ')}"


def _signed(n: int) -> str:
    return f"+{n}" if n >= 0 else str(n)


def render_sym_expr(expr: SymbolicExpression, names: Dict[UUID, str]) -> str:
    """S+8, S-4, (A-B)/4+2; unknown symbols print as their UUID."""
    def name(u: UUID) -> str:
        return names.get(u, str(u))

    if isinstance(expr, SymAddrConst):
        return name(expr.symbol) + (_signed(expr.offset) if expr.offset else "")
    text = f"({name(expr.symbol_minuend)}-{name(expr.symbol_subtrahend)})"
    if expr.scale != 1:
        text += f"/{expr.scale}"
    return text + (_signed(expr.offset) if expr.offset else "")


def _comments(ir: Ir) -> Dict[UUID, List[Tuple[int, str]]]:
    by_element: Dict[UUID, List[Tuple[int, str]]] = {}
    for owner_name, owner in _owners(ir):
        try:
            table = auxdata.get_table(owner, "comments", auxdata.SANCTIONED["comments"]) or {}
        except auxdata.AuxDataError as e:
            log.warning(event="comments_unreadable", owner=owner_name, error=str(e))
            continue
        for offset, text in table.items():
            by_element.setdefault(offset.element_id, []).append((offset.displacement, text))
    for notes in by_element.values():
        notes.sort()
    return by_element


def _dump_aux(lines: List[str], owner: Union[Ir, Module], indent: str) -> None:
    for label in sorted(owner.aux_data):
        entry = owner.aux_data[label]
        lines.append(f"{indent}auxdata {label} {entry.type_spec} {len(entry.data)} bytes")


def cmd_dump(path: str) -> Result:
    try:
        ir = _read(path)
        limit = config.get_dump_bytes()
    except (OSError, ValueError) as e:
        return _load_error(path, e)

    names = {s.uuid: s.name for m in ir.modules for s in m.symbols}
    comments = _comments(ir)
    lines = [f"ir {ir.uuid} version {ir.version}"]

    def notes(element: UUID, indent: str) -> None:
        for displacement, text in comments.get(element, ()):
            lines.append(f"{indent}+{displacement}: {text}")

    for module in ir.modules:
        base = "none" if module.preferred_base is None else hex(module.preferred_base)
        lines.append(
            f"  module {module.name} {module.uuid} isa={module.isa.name} "
            f"format={module.file_format.name} base={base}"
        )
        for section in module.sections:
            flags = ",".join(f.name for f in sorted(section.flags)) or "-"
            lines.append(f"    section {section.name} {section.uuid} flags={flags}")
            for interval in section.byte_intervals:
                where = "unaddressed" if interval.address is None else f"address={interval.address:#x}"
                lines.append(f"      interval {interval.uuid} {where} size={interval.size}")
                notes(interval.uuid, "        ")
                for block in sorted(interval.blocks, key=lambda b: (b.offset, b.uuid.bytes)):
                    kind = "code" if isinstance(block, CodeBlock) else "data"
                    data = interval.read(block.offset, block.size)
                    lines.append(
                        f"        {kind} {block.uuid} +{block.offset:#x} size={block.size}: {_hex(data, limit)}"
                    )
                    notes(block.uuid, "          ")
                for offset in sorted(interval.sym_exprs):
                    rendered = render_sym_expr(interval.sym_exprs[offset], names)
                    lines.append(f"        symexpr +{offset:#x}: {rendered}")
        for symbol in module.symbols:
            if symbol.value is not None:
                payload = f"value={symbol.value:#x}"
            elif symbol.referent is not None:
                payload = f"-> {symbol.referent}"
            else:
                payload = "undefined"
            lines.append(f"    symbol {symbol.name} {symbol.uuid} {payload}")
        for proxy in module.proxy_blocks:
            lines.append(f"    proxy {proxy.uuid}")
        _dump_aux(lines, module, "    ")
    _dump_aux(lines, ir, "  ")
    return 0, "\n".join(lines)


# cfg-dot

def cfg_to_dot(ir: Ir) -> str:
    lines = ["digraph ipcfg {"]
    for vertex in sorted(ir.cfg.vertices, key=lambda u: u.bytes):
        if isinstance(ir.get_by_uuid(vertex), ProxyBlock):
            lines.append(f'  "{vertex}" [style=dashed];')
        else:
            lines.append(f'  "{vertex}";')
    for edge in ir.cfg.edges():
        lines.append(f'  "{edge.source}" -> "{edge.target}" [label="{edge.label}"];')
    lines.append("}")
    return "\n".join(lines)


def cmd_cfg_dot(path: str) -> Result:
    try:
        ir = _read(path)
    except (OSError, wire.WireError) as e:
        return _load_error(path, e)
    return 0, cfg_to_dot(ir)


# diff

def _facts(ir: Ir) -> Dict[Tuple[str, str], Dict[str, object]]:
    """(entity, path) -> comparable fields, keyed by UUID rather than position."""
    facts: Dict[Tuple[str, str], Dict[str, object]] = {
        ("ir", "ir"): {"uuid": ir.uuid, "version": ir.version},
    }

    def add(entity: str, path: str, **fields) -> None:
        facts.setdefault((entity, path), fields)

    for module in ir.modules:
        add("module", str(module.uuid), name=module.name, isa=module.isa,
            file_format=module.file_format, preferred_base=module.preferred_base)
        for section in module.sections:
            add("section", str(section.uuid), module=module.uuid, name=section.name,
                flags=frozenset(section.flags))
            for interval in section.byte_intervals:
                add("interval", str(interval.uuid), section=section.uuid, address=interval.address,
                    size=interval.size, contents=bytes(interval.contents))
                for block in interval.blocks:
                    add("block", str(block.uuid), kind=type(block).__name__, interval=interval.uuid,
                        offset=block.offset, size=block.size)
                for offset, expr in interval.sym_exprs.items():
                    add("symexpr", f"{interval.uuid}+{offset:#x}", expr=expr)
        for symbol in module.symbols:
            add("symbol", str(symbol.uuid), module=module.uuid, name=symbol.name, payload=symbol.payload)
        for proxy in module.proxy_blocks:
            add("proxy", str(proxy.uuid), module=module.uuid)
    for vertex in ir.cfg.vertices:
        add("vertex", str(vertex))
    for edge in ir.cfg.edges():
        add("edge", f"{edge.source} -> {edge.target} [{edge.label}]")
    for owner_name, owner in _owners(ir):
        prefix = "ir" if owner is ir else str(owner.uuid)
        for label, entry in owner.aux_data.items():
            add("auxdata", f"{prefix}/{label}", type_spec=entry.type_spec, data=entry.data)
    return facts


def diff_irs(a: Ir, b: Ir) -> List[DiffEntry]:
    left, right = _facts(a), _facts(b)
    entries: List[DiffEntry] = []
    for key in left.keys() | right.keys():
        entity, path = key
        if key not in right:
            entries.append(DiffEntry(kind="Removed", entity=entity, path=path, detail=""))
        elif key not in left:
            entries.append(DiffEntry(kind="Added", entity=entity, path=path, detail=""))
        else:
            changed = sorted(f for f in left[key].keys() | right[key].keys()
                             if left[key].get(f) != right[key].get(f))
            if changed:
                entries.append(DiffEntry(kind="Changed", entity=entity, path=path, detail=",".join(changed)))
    entries.sort(key=lambda d: (d["entity"], d["path"], d["kind"]))
    return entries


def format_diff_entry(entry: DiffEntry) -> str:
    text = f"{entry['kind']} {entry['entity']} {entry['path']}"
    return f"{text}: {entry['detail']}" if entry["detail"] else text


def cmd_diff(path_a: str, path_b: str) -> Result:
    try:
        a = _read(path_a)
    except (OSError, wire.WireError) as e:
        return _load_error(path_a, e)
    try:
        b = _read(path_b)
    except (OSError, wire.WireError) as e:
        return _load_error(path_b, e)
    entries = diff_irs(a, b)
    return (1 if entries else 0), "\n".join(format_diff_entry(d) for d in entries)


# canonicalize

def cmd_canonicalize(path: str, out: Optional[str] = None) -> Result:
    try:
        with open(path, "rb") as f:
            canonical = wire.canonicalize(f.read())
    except (OSError, wire.WireError) as e:
        return _load_error(path, e)
    target = out or path
    try:
        with open(target, "wb") as f:
            f.write(canonical)
    except OSError as e:
        return 2, f"Error: {target}: {e}"
    log.info(event="canonicalize", source=path, target=target, size=len(canonical))
    return 0, ""


# layout

def address_map(ir: Ir, assignment: Dict[UUID, int]) -> str:
    rows = [
        [str(interval.uuid), f"{assignment[interval.uuid]:#x}", interval.size]
        for module in ir.modules
        for interval in module.byte_intervals()
        if interval.uuid in assignment
    ]
    return tabulate(rows, tablefmt="plain") if rows else ""


def cmd_layout(path: str, base: Optional[int], out_image: str, out_map: str) -> Result:
    try:
        ir = wire.read_file(path, strict=True)
    except (OSError, wire.WireError) as e:
        return _load_error(path, e)
    try:
        base = config.get_default_base() if base is None else base
    except ValueError as e:
        return 2, f"Error: {e}"
    try:
        assignment = layout(ir, base)
        image = build_image(ir, assignment)
    except (RewriteError, IrError, auxdata.AuxDataError) as e:
        return 1, f"Error: {e}"

    table = address_map(ir, assignment)
    try:
        with open(out_image, "wb") as f:
            f.write(image.data)
        with open(out_map, "w", encoding="utf-8") as f:
            f.write(table + "\n" if table else "")
    except OSError as e:
        return 2, f"Error: {e}"
    return 0, f"image {out_image}: base {image.base:#x}, {len(image.data)} bytes, {len(assignment)} intervals"
