"""Full-precision deterministic JSON output."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from gpscheck._json import dumps


def test_round_trips_doubles_exactly():
    values = [0.1, 1.0 / 3.0, 1e-308, 1.7976931348623157e308, -0.0, 2.0**-52]
    text = dumps({"values": values})
    back = json.loads(text)
    for original, parsed in zip(values, back["values"]):
        assert parsed == original


def test_floats_rendered_with_17_digits():
    assert dumps(1.0 / 3.0).strip() == "0.33333333333333331"
    assert dumps(0.5).strip() == "0.5"


def test_trailing_newline_and_indentation():
    text = dumps({"a": [1, 2]})
    assert text.endswith("\n")
    assert text == '{\n  "a": [\n    1,\n    2\n  ]\n}\n'


def test_scalar_types():
    assert dumps(None) == "null\n"
    assert dumps(True) == "true\n"
    assert dumps(False) == "false\n"
    assert dumps(42) == "42\n"
    assert dumps("a \"quote\"") == '"a \\"quote\\""\n'
    assert dumps([]) == "[]\n"
    assert dumps({}) == "{}\n"


def test_numpy_scalars_and_arrays():
    doc = {
        "i": np.int64(7),
        "f": np.float64(0.25),
        "arr": np.array([[1.5, 2.5]]),
    }
    back = json.loads(dumps(doc))
    assert back == {"i": 7, "f": 0.25, "arr": [[1.5, 2.5]]}


def test_bool_is_not_an_int():
    # bool subclasses int; it must stay a JSON boolean
    assert json.loads(dumps({"flag": True}))["flag"] is True
    assert dumps([True, 1]) == "[\n  true,\n  1\n]\n"


def test_non_finite_rejected():
    for bad in (math.nan, math.inf, -math.inf, np.float64("nan")):
        with pytest.raises(ValueError, match="non-finite"):
            dumps({"x": bad})


def test_non_string_keys_rejected():
    with pytest.raises(TypeError, match="keys must be strings"):
        dumps({1: "one"})


def test_unknown_types_rejected():
    with pytest.raises(TypeError, match="cannot serialize"):
        dumps({"x": {1, 2}})


def test_identical_input_identical_bytes():
    doc = {"b": [1.1, 2.2], "a": {"nested": 3.3}}
    assert dumps(doc) == dumps(doc)


def test_stdlib_can_parse_deep_nesting():
    doc = {"level1": {"level2": [{"level3": [0.1, [2, [3.5]]]}]}}
    assert json.loads(dumps(doc)) == doc
