"""
Golden-output tests for the read-only commands.

Fixtures live in tests/fixtures/<name>.bir and goldens in
tests/golden/<fixture>.<command>.txt; both are checked in. Each fixture has a
builder here and must equal its canonical save. After an intended change,
set BIR_UPDATE_GOLDENS=1 to rewrite fixtures and goldens from current output.
"""
import os
import pathlib

import pytest

import auxdata
import wire
from ipcfg import EdgeKind, EdgeLabel, add_edge
from ir import (
    ByteInterval,
    CodeBlock,
    DataBlock,
    FileFormat,
    Ir,
    Isa,
    Module,
    Section,
    SectionFlag,
    SymAddrAddr,
    SymAddrConst,
    Symbol,
    add_block,
)
from main import run_cli
from rewrite import apply_layout, insert_bytes, layout, move_block
from tests.irgen import (
    BLOCK_A,
    BLOCK_B,
    BLOCK_D,
    DATA_IV,
    IR_ID,
    MODULE,
    PROXY,
    SYM_DATA,
    SYM_MAIN,
    TEXT_IV,
    U,
    sample_ir,
)
from tools import render_sym_expr

GOLDEN = pathlib.Path(__file__).parent / "golden"
FIXTURES = pathlib.Path(__file__).parent / "fixtures"
READERS = ["validate", "stats", "dump", "cfg-dot"]


def _updating() -> bool:
    return os.getenv("BIR_UPDATE_GOLDENS") == "1"


def _empty() -> Ir:
    return Ir(uuid=IR_ID)


def _dangling() -> Ir:
    ir = sample_ir()
    ir.modules[0].add_symbol(Symbol("ghost", U(0xbad), uuid=U(0x54)))
    return ir


def _two_modules() -> Ir:
    ir = sample_ir()
    lib = ir.add_module(Module("libm", Isa.X64, uuid=U(0x80)))
    text = lib.add_section(Section(".text", {SectionFlag.Loaded, SectionFlag.Executable}, uuid=U(0x81)))
    interval = text.add_byte_interval(ByteInterval(contents=bytes.fromhex("f30f5ec1c3"), uuid=U(0x82)))
    add_block(interval, 0, CodeBlock(5, uuid=U(0x83)))
    lib.add_symbol(Symbol("divsd", U(0x83), uuid=U(0x84)))
    add_edge(ir.cfg, PROXY, U(0x83), EdgeLabel(EdgeKind.Branch, direct=False))
    interval.add_sym_expr(1, SymAddrAddr(U(0x84), U(0x50), 4, 2))
    return ir


def _moved() -> Ir:
    ir = sample_ir()
    move_block(ir, BLOCK_B, TEXT_IV, 4)
    return ir


def _laid_out() -> Ir:
    # The 64-byte alignment on .data leaves a 48-byte gap, recorded as padding.
    ir = sample_ir()
    auxdata.set_alignment(ir.get_by_uuid(MODULE), BLOCK_D, 64)
    apply_layout(ir, layout(ir, 0x400000))
    return ir


def _grown() -> Ir:
    ir = sample_ir()
    insert_bytes(ir, TEXT_IV, 8, bytes.fromhex("90909090"))
    return ir


def _calls() -> Ir:
    ir = sample_ir()
    add_edge(ir.cfg, BLOCK_B, PROXY, EdgeLabel(EdgeKind.Call))
    return ir


def _forwarded() -> Ir:
    ir = sample_ir()
    module = ir.get_by_uuid(MODULE)
    module.add_symbol(Symbol("main_alias", None, uuid=U(0x55)))
    auxdata.set_forwarding(module, U(0x55), SYM_MAIN)
    ir.get_by_uuid(DATA_IV).add_sym_expr(0, SymAddrAddr(SYM_DATA, SYM_MAIN, 1, -4))
    return ir


def _bare() -> Ir:
    ir = Ir(version=7, uuid=U(2))
    module = ir.add_module(Module("stub", Isa.ARM64, FileFormat.Raw, uuid=U(0x90)))
    flags = {SectionFlag.Readable, SectionFlag.Writable, SectionFlag.Loaded}
    interval = module.add_section(Section(".bss", flags, uuid=U(0x91))).add_byte_interval(
        ByteInterval(32, uuid=U(0x92))
    )
    add_block(interval, 0, DataBlock(32, uuid=U(0x93)))
    module.add_symbol(Symbol("origin", -16, uuid=U(0x94)))
    return ir


BUILDERS = {
    "empty": _empty,
    "sample": sample_ir,
    "dangling": _dangling,
    "two_modules": _two_modules,
    "moved": _moved,
    "laid_out": _laid_out,
    "grown": _grown,
    "calls": _calls,
    "forwarded": _forwarded,
    "bare": _bare,
}
FIXTURE_NAMES = list(BUILDERS)


def fixture(name: str) -> str:
    return str(FIXTURES / f"{name}.bir")


def _run(argv, capsys):
    code = run_cli(argv)
    return code, capsys.readouterr().out


def check_golden(name: str, text: str) -> None:
    path = GOLDEN / f"{name}.txt"
    if _updating():
        path.write_bytes(text.encode("utf-8"))
    assert path.exists(), f"golden {path.name} is missing; rerun with BIR_UPDATE_GOLDENS=1"
    assert text == path.read_bytes().decode("utf-8")


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_fixture_file_is_the_canonical_save_of_its_builder(name):
    path = FIXTURES / f"{name}.bir"
    data = wire.save(BUILDERS[name](), strict=False)
    if _updating():
        path.write_bytes(data)
    assert path.read_bytes() == data
    assert wire.canonicalize(data) == data


@pytest.mark.parametrize("command", READERS)
@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_reader_goldens(name, command, capsys):
    code, out = _run([command, fixture(name)], capsys)
    assert code == (1 if command == "validate" and name == "dangling" else 0)
    check_golden(f"{name}.{command}", out)


@pytest.mark.parametrize("left, right", [
    ("sample", "moved"),
    ("sample", "dangling"),
    ("sample", "two_modules"),
    ("sample", "grown"),
    ("empty", "sample"),
])
def test_diff_goldens(left, right, capsys):
    code, out = _run(["diff", fixture(left), fixture(right)], capsys)
    assert code == 1
    check_golden(f"diff.{left}.{right}", out)


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_diff_with_itself_is_empty(name, capsys):
    assert _run(["diff", fixture(name), fixture(name)], capsys) == (0, "")


def test_diff_is_symmetric(capsys):
    _, forward = _run(["diff", fixture("sample"), fixture("two_modules")], capsys)
    _, backward = _run(["diff", fixture("two_modules"), fixture("sample")], capsys)
    flip = {"Added": "Removed", "Removed": "Added", "Changed": "Changed"}
    flipped = sorted(flip[line.split(" ", 1)[0]] + " " + line.split(" ", 1)[1] for line in forward.splitlines())
    assert flipped == sorted(backward.splitlines())


def test_diff_reports_one_added_edge(capsys):
    code, out = _run(["diff", fixture("sample"), fixture("calls")], capsys)
    assert code == 1
    assert out.splitlines() == [f"Added edge {BLOCK_B} -> {PROXY} [Call]"]


def test_dump_shows_bytes_sym_exprs_and_comments(capsys):
    _, out = _run(["dump", fixture("sample")], capsys)
    assert "de ad be ef" in out
    assert "symexpr +0x8: main" in out
    lines = out.splitlines()
    block_a = next(i for i, line in enumerate(lines) if line.startswith(f"        code {BLOCK_A} "))
    assert lines[block_a + 1] == "          +2: set up frame"
    assert "symbol puts 00000000-0000-0000-0000-000000000052 undefined" in out
    assert "auxdata vendorNotes string 21 bytes" in out


def test_dump_elides_long_blocks(capsys, monkeypatch):
    monkeypatch.setenv("BIR_DUMP_BYTES", "4")
    _, out = _run(["dump", fixture("sample")], capsys)
    assert "de ad .. 00 00" in out


def test_render_sym_expr():
    s, a, b = U(1), U(2), U(3)
    names = {s: "S", a: "A", b: "B"}
    assert render_sym_expr(SymAddrConst(s, 8), names) == "S+8"
    assert render_sym_expr(SymAddrConst(s, -4), names) == "S-4"
    assert render_sym_expr(SymAddrConst(s), names) == "S"
    assert render_sym_expr(SymAddrAddr(a, b, 4, 2), names) == "(A-B)/4+2"
    assert render_sym_expr(SymAddrAddr(a, U(9)), names) == f"(A-{U(9)})"


def test_stats_counts_edge_kinds(capsys):
    code, out = _run(["stats", fixture("calls")], capsys)
    lines = out.splitlines()
    assert code == 0
    assert "Call: 2" in lines and "Fallthrough: 1" in lines
    assert "aux_data: 8" in lines
    table = lines[lines.index("aux_data: 8") + 2:]
    assert table[0].split() == ["owner", "label", "bytes", "status"]
    assert table[1].split() == ["ir", "vendorNotes", "21", "unsanctioned"]
    assert ["module:main", "seEncodings", "40", "repository"] in [row.split() for row in table]
