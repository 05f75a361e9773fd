import os

import pytest

import auxdata
import wire
from ir import Ir, Symbol
from main import run_cli
from tests.irgen import BLOCK_A, DATA_IV, MODULE, TEXT_IV, U, sample_ir

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
READERS = ["validate", "stats", "dump", "cfg-dot"]


@pytest.fixture
def write(tmp_path):
    """write(name, ir_or_bytes, strict=True) -> path of a file under tmp_path."""
    def _write(name, content, strict=True):
        path = tmp_path / name
        data = content if isinstance(content, bytes) else wire.save(content, strict=strict)
        path.write_bytes(data)
        return str(path)
    return _write


def _dangling_ir() -> Ir:
    ir = sample_ir()
    ir.get_by_uuid(MODULE).add_symbol(Symbol("ghost", U(0xbad)))
    return ir


@pytest.mark.parametrize("command", READERS)
def test_valid_file_exits_zero(command, write, capsys):
    assert run_cli([command, write("ok.bir", sample_ir())]) == 0
    assert capsys.readouterr().err == ""


@pytest.mark.parametrize("command", READERS)
def test_unreadable_files_exit_two(command, write, tmp_path, capsys):
    good = wire.save(sample_ir())
    for name, data in (("truncated.bir", good[:-3]), ("magic.bir", b"ELF\x7f" + good[4:]), ("trailing.bir", good + b"\x00")):
        assert run_cli([command, write(name, data)]) == 2
        err = capsys.readouterr().err
        assert err.startswith("Error: ") and name in err
    assert run_cli([command, str(tmp_path / "missing.bir")]) == 2


def test_empty_fixture_is_valid(capsys):
    assert run_cli(["validate", os.path.join(FIXTURES, "empty.bir")]) == 0
    assert capsys.readouterr().out == ""


def test_validate_reports_violations(write, capsys):
    assert run_cli(["validate", write("dangling.bir", _dangling_ir(), strict=False)]) == 1
    out = capsys.readouterr().out
    assert out.startswith("DanglingReference ")
    assert "refers to missing block" in out


def test_diff_exit_codes(write, capsys):
    a = write("a.bir", sample_ir())
    b = write("b.bir", _dangling_ir(), strict=False)
    assert run_cli(["diff", a, a]) == 0
    assert run_cli(["diff", a, b]) == 1
    assert "Added symbol" in capsys.readouterr().out
    assert run_cli(["diff", a, write("bad.bir", b"BIR")]) == 2


def test_layout_rejects_bad_alignment(write, tmp_path, capsys):
    ir = sample_ir()
    auxdata.set_alignment(ir.get_by_uuid(MODULE), BLOCK_A, 3)
    code = run_cli([
        "layout", write("align3.bir", ir), "--base", "0x1000",
        "--out-image", str(tmp_path / "img"), "--out-map", str(tmp_path / "map"),
    ])
    assert code == 1
    assert "AlignmentNotPowerOfTwo" in capsys.readouterr().out
    assert not (tmp_path / "img").exists()


def test_layout_refuses_invalid_ir(write, tmp_path):
    code = run_cli([
        "layout", write("dangling.bir", _dangling_ir(), strict=False),
        "--out-image", str(tmp_path / "img"), "--out-map", str(tmp_path / "map"),
    ])
    assert code == 2


def test_layout_of_empty_ir(tmp_path, capsys):
    image, table = tmp_path / "img", tmp_path / "map"
    code = run_cli([
        "layout", os.path.join(FIXTURES, "empty.bir"), "--base", "0x1000",
        "--out-image", str(image), "--out-map", str(table),
    ])
    assert code == 0
    assert image.read_bytes() == b""
    assert table.read_text() == ""
    assert "0 bytes" in capsys.readouterr().out


def test_layout_writes_image_and_map(write, tmp_path):
    image, table = tmp_path / "img", tmp_path / "map"
    code = run_cli([
        "layout", write("sample.bir", sample_ir()), "--base", "1000",
        "--out-image", str(image), "--out-map", str(table),
    ])
    assert code == 0
    data = image.read_bytes()
    assert len(data) == 32
    assert data[24:32] == (0x1000).to_bytes(8, "little")
    rows = [line.split() for line in table.read_text().splitlines()]
    assert rows == [[str(TEXT_IV), "0x1000", "16"], [str(DATA_IV), "0x1010", "16"]]


def test_layout_default_base_from_environment(write, tmp_path, monkeypatch):
    monkeypatch.setenv("BIR_DEFAULT_BASE", "0x2000")
    table = tmp_path / "map"
    args = ["layout", write("sample.bir", sample_ir()), "--out-image", str(tmp_path / "img"), "--out-map", str(table)]
    assert run_cli(args) == 0
    assert table.read_text().split()[1] == "0x2000"

    monkeypatch.setenv("BIR_DEFAULT_BASE", "somewhere")
    assert run_cli(args) == 2


def test_bad_base_argument_is_a_usage_error(write, tmp_path):
    with pytest.raises(SystemExit) as err:
        run_cli(["layout", write("s.bir", sample_ir()), "--base", "zz",
                 "--out-image", str(tmp_path / "i"), "--out-map", str(tmp_path / "m")])
    assert err.value.code == 2


def test_dump_rejects_bad_byte_limit(write, monkeypatch):
    monkeypatch.setenv("BIR_DUMP_BYTES", "one")
    assert run_cli(["dump", write("s.bir", sample_ir())]) == 2


def test_canonicalize_out_and_in_place(write, tmp_path):
    source = write("dangling.bir", _dangling_ir(), strict=False)
    out = tmp_path / "canonical.bir"
    assert run_cli(["canonicalize", source, "--out", str(out)]) == 0
    assert out.read_bytes() == wire.canonicalize((tmp_path / "dangling.bir").read_bytes())
    assert run_cli(["canonicalize", str(out)]) == 0
    assert run_cli(["canonicalize", write("bad.bir", b"BIR\x00")]) == 2
