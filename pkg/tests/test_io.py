from __future__ import annotations

from pathlib import Path

import numpy as np

from heatlab.core.discretize import Grid, OperatorKind, assemble_first_order
from heatlab.core.io import atomic_write_text, operator_dump, remove_files, write_json, write_operator
from heatlab.core.polygeom import SubharmonicPolynomial


def test_atomic_write_leaves_no_temp_files(tmp_path: Path):
    target = tmp_path / "nested" / "out.txt"
    atomic_write_text(target, "one\n")
    atomic_write_text(target, "two\n")

    assert target.read_text(encoding="utf-8") == "two\n"
    assert [p.name for p in target.parent.iterdir()] == ["out.txt"]


def test_operator_dump_header_and_order(tmp_path: Path):
    p = SubharmonicPolynomial.from_real_poly([{"a": 2, "b": 0, "c": 1.0}, {"a": 0, "b": 2, "c": 1.0}])
    grid = Grid(half_width=1.0, n=5)
    op = assemble_first_order(OperatorKind.ZBAR, grid, p, 0.5)

    lines = operator_dump(op).splitlines()
    header = lines[0].split()
    assert header[0] == "#"
    assert header[1] == "5"
    assert float(header[2]) == 1.0
    assert float(header[3]) == grid.h
    assert header[4] == "ZBar"
    assert float(header[5]) == 0.5

    rows = [tuple(int(x) for x in line.split()[:2]) for line in lines[1:]]
    assert rows == sorted(rows)
    dense = op.matrix.toarray()
    for line in lines[1:]:
        i, j, re, im = line.split()
        assert complex(float(re), float(im)) == dense[int(i), int(j)]
    assert len(rows) == np.count_nonzero(dense)

    path = write_operator(tmp_path / "zbar.txt", op)
    assert path.read_text(encoding="utf-8") == operator_dump(op)


def test_write_json_and_remove_files(tmp_path: Path):
    a = write_json(tmp_path / "a.json", {"z": 1 + 2j, "x": np.float64(0.5)})
    b = tmp_path / "b.json"
    assert a.read_text(encoding="utf-8").endswith("\n")

    assert remove_files([a, b]) == 1
    assert not a.exists()
