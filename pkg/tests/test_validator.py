import random
import uuid

import pytest

import auxdata
from ir import (
    AuxDataEntry,
    ByteInterval,
    DataBlock,
    Ir,
    Module,
    Offset,
    Section,
    SymAddrAddr,
    SymAddrConst,
    Symbol,
    add_block,
)
from tests.irgen import (
    BLOCK_A,
    BLOCK_B,
    BLOCK_D,
    DATA_IV,
    FUNCTION,
    MODULE,
    TEXT_IV,
    U,
    random_ir,
    sample_ir,
)
from validator import Violation, ViolationCode, validate


def _scratch(ir: Ir):
    """A fresh valid module with one 8-byte interval and one value symbol."""
    module = ir.add_module(Module("scratch"))
    interval = module.add_section(Section(".scratch")).add_byte_interval(ByteInterval(8, bytes(8)))
    symbol = module.add_symbol(Symbol("here", 0x40))
    return module, interval, symbol


def inject_duplicate_uuid(ir):
    module = Module("twin", uuid=ir.uuid)
    module._parent = ir
    ir.modules.append(module)


def inject_dangling_reference(ir):
    module, _, _ = _scratch(ir)
    module.add_symbol(Symbol("ghost", uuid.uuid4()))


def inject_block_out_of_range(ir):
    _, interval, _ = _scratch(ir)
    block = DataBlock(4)
    add_block(interval, 4, block)
    block.size = 5


def inject_contents_exceed_size(ir):
    module, _, _ = _scratch(ir)
    module.sections[0].add_byte_interval(ByteInterval(2, b"abcd"))


def inject_sym_expr_out_of_range(ir):
    _, interval, symbol = _scratch(ir)
    interval.sym_exprs[interval.size] = SymAddrConst(symbol.uuid)


def inject_cfg_endpoint(ir):
    _, interval, _ = _scratch(ir)
    block = DataBlock(1)
    add_block(interval, 0, block)
    ir.cfg._graph.add_node(block.uuid)


def inject_aux_decode_failure(ir):
    ir.aux_data["alignment"] = AuxDataEntry("mapping<UUID,uint64>", b"\x00")


def inject_function_table(ir):
    auxdata.set_table(ir, "functionEntries", auxdata.SANCTIONED["functionEntries"], {uuid.uuid4(): set()})


def inject_scale_zero(ir):
    _, interval, symbol = _scratch(ir)
    interval.sym_exprs[0] = SymAddrAddr(symbol.uuid, symbol.uuid, scale=0)


INJECTORS = {
    ViolationCode.DuplicateUuid: inject_duplicate_uuid,
    ViolationCode.DanglingReference: inject_dangling_reference,
    ViolationCode.BlockOutOfRange: inject_block_out_of_range,
    ViolationCode.ContentsExceedSize: inject_contents_exceed_size,
    ViolationCode.SymExprOutOfRange: inject_sym_expr_out_of_range,
    ViolationCode.CfgEndpointNotCodeOrProxy: inject_cfg_endpoint,
    ViolationCode.AuxDataDecodeFailure: inject_aux_decode_failure,
    ViolationCode.FunctionTableInconsistent: inject_function_table,
    ViolationCode.ScaleZero: inject_scale_zero,
}


def test_every_code_has_an_injector():
    assert set(INJECTORS) == set(ViolationCode)


@pytest.mark.parametrize("code", list(ViolationCode), ids=lambda c: c.value)
def test_injected_defect_is_reported(code):
    for seed in range(50):
        ir = random_ir(random.Random(seed), max_modules=2)
        assert validate(ir) == [], f"seed {seed} produced an invalid IR"
        INJECTORS[code](ir)
        found = {v.code for v in validate(ir)}
        assert code in found, f"seed {seed}: {code.value} not reported, got {found}"


def test_sample_ir_is_valid():
    assert validate(sample_ir()) == []


def test_two_module_ir_is_valid():
    ir = sample_ir()
    _scratch(ir)
    assert validate(ir) == []


def test_dangling_symbol_reported_once():
    ir = sample_ir()
    module = ir.get_by_uuid(MODULE)
    ghost = module.add_symbol(Symbol("ghost", U(0xbad)))
    assert validate(ir) == [
        Violation(ViolationCode.DanglingReference, ghost.uuid,
                  f"symbol 'ghost' refers to missing block {U(0xbad)}"),
    ]


def test_function_tables_against_hand_built_oracle():
    ir = sample_ir()
    module = ir.get_by_uuid(MODULE)
    blocks = {U(0x71): {BLOCK_A}, U(0x72): {BLOCK_A, BLOCK_B}}
    entries = {U(0x71): {BLOCK_B}, U(0x72): {BLOCK_A}, U(0x73): {BLOCK_A}}
    auxdata.set_table(module, "functionBlocks", auxdata.SANCTIONED["functionBlocks"], blocks)
    auxdata.set_table(module, "functionEntries", auxdata.SANCTIONED["functionEntries"], entries)

    expected = {f for f in entries if f not in blocks or not entries[f] <= blocks[f]}
    reported = {v.location for v in validate(ir) if v.code == ViolationCode.FunctionTableInconsistent}
    assert reported == expected == {U(0x71), U(0x73)}


def test_overlapping_blocks_are_not_violations():
    ir = sample_ir()
    interval = ir.get_by_uuid(DATA_IV)
    add_block(interval, 4, DataBlock(8))
    assert validate(ir) == []


def test_validate_is_idempotent():
    ir = sample_ir()
    inject_scale_zero(ir)
    inject_dangling_reference(ir)
    assert validate(ir) == validate(ir)


def test_violation_text():
    where = Violation(ViolationCode.SymExprOutOfRange, (U(1), 16), "past the end")
    assert str(where) == f"SymExprOutOfRange {U(1)}+0x10: past the end"
    assert str(Violation(ViolationCode.ScaleZero, U(2), "x")) == f"ScaleZero {U(2)}: x"


def test_comment_past_the_end_of_its_block():
    ir = sample_ir()
    auxdata.add_comment(ir.get_by_uuid(MODULE), Offset(BLOCK_A, 100), "too far")
    assert validate(ir) == [
        Violation(ViolationCode.BlockOutOfRange, (BLOCK_A, 100),
                  "table 'comments' points past the end of a 8-byte CodeBlock"),
    ]


@pytest.mark.parametrize("label, key, value, ok", [
    ("padding", Offset(TEXT_IV, 16), 48, True),
    ("padding", Offset(TEXT_IV, 17), 48, False),
    ("seEncodings", Offset(DATA_IV, 16), 8, True),
    ("seEncodings", Offset(DATA_IV, 24), 8, False),
    ("comments", Offset(BLOCK_D, 16), "end", True),
])
def test_offsets_may_reach_but_not_pass_the_end(label, key, value, ok):
    ir = sample_ir()
    module = ir.get_by_uuid(MODULE)
    table = auxdata.get_table(module, label, auxdata.known_spec(label)) or {}
    table[key] = value
    auxdata.set_table(module, label, auxdata.known_spec(label), table)
    found = [(v.code, v.location) for v in validate(ir)]
    assert found == ([] if ok else [(ViolationCode.BlockOutOfRange, (key.element_id, key.displacement))])


def test_function_members_must_be_code_blocks():
    ir = sample_ir()
    module = ir.get_by_uuid(MODULE)
    auxdata.set_table(module, "functionBlocks", auxdata.SANCTIONED["functionBlocks"],
                      {FUNCTION: {BLOCK_A, BLOCK_B, BLOCK_D}})
    auxdata.set_table(module, "functionEntries", auxdata.SANCTIONED["functionEntries"], {FUNCTION: {BLOCK_D}})
    assert validate(ir) == [
        Violation(ViolationCode.DanglingReference, MODULE,
                  f"table 'functionBlocks' entry {BLOCK_D} is not a CodeBlock"),
        Violation(ViolationCode.DanglingReference, MODULE,
                  f"table 'functionEntries' entry {BLOCK_D} is not a CodeBlock"),
    ]
