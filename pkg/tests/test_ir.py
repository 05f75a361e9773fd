import pytest

from ipcfg import EdgeKind, EdgeLabel, add_edge, out_edges
from ir import (
    ByteInterval,
    CodeBlock,
    DataBlock,
    DuplicateUuid,
    Module,
    OutOfRange,
    ProxyBlock,
    ProxyHasNoBytes,
    Section,
    Symbol,
    UnknownUuid,
    add_block,
    block_address,
    block_bytes,
    find_node,
    module_of,
    new_ir,
    remove_block,
    symbols_by_name,
)
from tests.irgen import BLOCK_A, BLOCK_B, PROXY, U, sample_ir
from validator import validate


def _interval_ir(contents: bytes, size=None, address=None):
    ir = new_ir(1)
    module = ir.add_module(Module("m"))
    section = module.add_section(Section(".text"))
    interval = section.add_byte_interval(ByteInterval(size, contents, address=address))
    return ir, interval


def test_new_ir_is_empty_and_valid():
    ir = new_ir(1)
    assert ir.modules == []
    assert ir.cfg.edges() == []
    assert ir.aux_data == {}
    assert validate(ir) == []


def test_new_ir_uuids_are_fresh():
    assert new_ir(1).uuid != new_ir(1).uuid


def test_find_node_after_add_and_remove():
    ir, interval = _interval_ir(bytes(8))
    block = CodeBlock(4)
    add_block(interval, 0, block)
    assert find_node(ir, block.uuid) is block
    assert find_node(ir, U(0xdead)) is None

    remove_block(ir, block.uuid)
    assert find_node(ir, block.uuid) is None
    assert interval.blocks == []


def test_remove_block_drops_cfg_vertex_and_edges():
    ir = sample_ir()
    remove_block(ir, PROXY)
    assert PROXY not in ir.cfg.vertices
    assert [e.target for e in out_edges(ir.cfg, BLOCK_A)] == [BLOCK_B]
    assert validate(ir) == []


def test_block_bytes_slice():
    ir, interval = _interval_ir(bytes.fromhex("11223344"))
    add_block(interval, 1, DataBlock(2, uuid=U(7)))
    assert block_bytes(ir, U(7)) == bytes.fromhex("2233")


def test_block_bytes_zero_fills_uninitialized_tail():
    ir, interval = _interval_ir(bytes.fromhex("11223344"), size=8)
    add_block(interval, 2, DataBlock(4, uuid=U(7)))
    assert block_bytes(ir, U(7)) == bytes.fromhex("33440000")


def test_block_bytes_of_proxy_fails():
    ir = sample_ir()
    with pytest.raises(ProxyHasNoBytes):
        block_bytes(ir, PROXY)
    with pytest.raises(UnknownUuid):
        block_bytes(ir, U(0xbad))


def test_block_address():
    ir, interval = _interval_ir(bytes(0x20), address=0x400000)
    add_block(interval, 0x10, CodeBlock(4, uuid=U(1)))
    add_block(interval, 0x10, DataBlock(2, uuid=U(2)))
    assert block_address(ir, U(1)) == 0x400010
    # Overlapping blocks at one offset share an address.
    assert block_address(ir, U(2)) == block_address(ir, U(1))

    interval.address = None
    assert block_address(ir, U(1)) is None


def test_add_block_bounds():
    ir, interval = _interval_ir(bytes(8))
    add_block(interval, 0, CodeBlock(4))
    add_block(interval, 2, CodeBlock(4))
    add_block(interval, 8, CodeBlock(0))
    with pytest.raises(OutOfRange):
        add_block(interval, 6, CodeBlock(4))
    assert len(interval.blocks) == 3
    assert validate(ir) == []


def test_duplicate_uuid_is_rejected_before_attaching():
    ir, interval = _interval_ir(bytes(8))
    add_block(interval, 0, CodeBlock(4, uuid=U(5)))
    with pytest.raises(DuplicateUuid):
        add_block(interval, 4, DataBlock(4, uuid=U(5)))
    assert len(interval.blocks) == 1


def test_write_zero_extends_and_respects_size():
    _, interval = _interval_ir(b"\x01", size=8)
    interval.write(4, b"\xff\xff")
    assert bytes(interval.contents) == b"\x01\x00\x00\x00\xff\xff"
    with pytest.raises(OutOfRange):
        interval.write(7, b"\x00\x00")


def test_symbols_by_name_spans_modules():
    ir = sample_ir()
    other = ir.add_module(Module("libc"))
    twin = other.add_symbol(Symbol("main", 0x1234))
    found = symbols_by_name(ir, "main")
    assert [s.uuid for s in found] == [U(0x50), twin.uuid]
    assert symbols_by_name(ir, "missing") == []


def test_module_of_walks_to_owner():
    ir = sample_ir()
    block = find_node(ir, BLOCK_A)
    assert module_of(block).name == "main"
    assert isinstance(find_node(ir, PROXY), ProxyBlock)


def test_cfg_edge_after_remove_block_targets_gone():
    ir = sample_ir()
    remove_block(ir, BLOCK_B)
    assert all(BLOCK_B not in (e.source, e.target) for e in ir.cfg.edges())
    # A's only remaining out edge is the call to the proxy.
    assert [e.label for e in out_edges(ir.cfg, BLOCK_A)] == [EdgeLabel(EdgeKind.Call)]
    add_edge(ir.cfg, BLOCK_A, PROXY, EdgeLabel(EdgeKind.Branch))
