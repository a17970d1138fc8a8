from concurrent.futures import ThreadPoolExecutor

import pandas as pd
import pytest

from app.result_writer import ResultWriter


@pytest.fixture
def writer(tmp_path):
    return ResultWriter(tmp_path / "out")


def test_creates_output_directory(writer, tmp_path):
    assert (tmp_path / "out").is_dir()


def test_write_csv_with_unit_header(writer):
    """Test the unit header line and the float format."""
    table = pd.DataFrame({"v_gs": [-1.0, 0.0], "i_d": [1.0 / 3.0, 2.5e-7], "flag": [0, 1]})
    path = writer.write_csv("transfer.csv", table, {"v_gs": "V", "i_d": "mA"})

    lines = path.read_bytes().decode().split("\n")
    assert lines[0] == "# v_gs [V], i_d [mA], flag [1]"
    assert lines[1] == "v_gs,i_d,flag"
    assert lines[2] == "-1,0.333333333,0"
    assert lines[3] == "0,2.5e-07,1"
    assert b"\r\n" not in path.read_bytes()


def test_write_text_is_atomic_and_registered_once(writer):
    writer.write_text("summary.txt", "first\n")
    path = writer.write_text("summary.txt", "second\n")

    assert path.read_text() == "second\n"
    assert writer.files == ["summary.txt"]
    assert not list(writer.output_dir.glob(".*.tmp"))


def test_register_external_file(writer):
    writer.register("ac.s2p")
    writer.register("ac.s2p")
    assert writer.files == ["ac.s2p"]


def test_concurrent_writes(writer):
    """Test that parallel writers each land their own file."""
    names = [f"curve_{i}.csv" for i in range(8)]
    table = pd.DataFrame({"x": [1.0, 2.0]})
    with ThreadPoolExecutor(max_workers=4) as executor:
        list(executor.map(lambda name: writer.write_csv(name, table, {}), names))

    assert sorted(writer.files) == sorted(names)
    for name in names:
        assert (writer.output_dir / name).read_text().startswith("# x [1]\nx\n")
