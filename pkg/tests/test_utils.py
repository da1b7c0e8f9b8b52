import numpy as np

from dic.errors import CheckpointError, ConfigError, TrainingDivergedError
from dic.utils import kv
from dic.utils.rng import stream
from dic.utils.table import format_table


def test_streams_depend_only_on_their_key():
    a = stream(1, "data", 5).standard_normal(4)
    stream(1, "train", 0).standard_normal(100)
    np.testing.assert_array_equal(a, stream(1, "data", 5).standard_normal(4))
    assert not np.array_equal(a, stream(1, "data", 6).standard_normal(4))
    assert not np.array_equal(a, stream(2, "data", 5).standard_normal(4))


def test_kv_values_and_nesting():
    assert kv.format_value(True) == "true"
    assert kv.format_value((1, 2)) == "1,2"
    assert kv.format_value(0.1) == "0.1"
    assert kv.nest([("a.b", "1"), ("a.c", "2"), ("a.b", "3")]) == {"a": {"b": "3", "c": "2"}}
    assert kv.render([("x", "1")]) == "x=1\n"


def test_error_lines_are_single_line():
    line = ConfigError('bad "value"\nsecond', field="model.groups").to_line()
    assert "\n" not in line
    assert line.startswith("error code=invalid_config field=model.groups")
    assert 'message="bad \'value\' second"' in line
    assert CheckpointError("gone", path="/x").to_line().endswith("path=/x")
    diverged = TrainingDivergedError("nan", step=3, lr=0.1, grad_norm=float("inf"))
    assert "step=3 lr=0.1 grad_norm=inf" in diverged.to_line()


def test_format_table_alignment():
    table = format_table(("name", "value"), [("a", 1), ("long", 22.5)])
    lines = table.splitlines()
    assert lines[0].startswith("name")
    assert set(lines[1]) <= {"-", " "}
    assert lines[2].endswith("    1")
    assert len({len(line) for line in lines}) == 1
