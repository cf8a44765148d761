import copy
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lumen.devices import (ExcitationKind, ResponseClass, bundled_library_text, device_to_dict,
                           dump_device_library, find_device, library_summary, load_boards,
                           load_device_library, photocurrent, read_library_text, response_matrix,
                           responsivity_table)
from lumen.exceptions import InvariantError, SchemaError
from lumen.gpio import Terminal

from oracles import TABLE

LETTER = {"E": ResponseClass.EXPECTED, "U": ResponseClass.UNEXPECTED,
          "X": ResponseClass.UNEXPLAINABLE, ".": ResponseClass.NONE}


def raw_library():
    return json.loads(bundled_library_text())


def test_matrix_matches_table(devices):
    assert [d.name for d in devices] == list(TABLE)
    for d in devices:
        row = TABLE[d.name]
        for i, kind in enumerate(ExcitationKind):
            for j, terminal in enumerate(Terminal):
                assert d.matrix[kind, terminal].response is LETTER[row[2 * i + j]], (d.name, kind, terminal)


def test_counts(devices):
    summary = library_summary(devices)
    assert summary["devices"] == 10
    assert summary["exploitable"] == 7
    assert summary["responsive_cells"] == 34 == sum(len(r.replace(".", "")) for r in TABLE.values())
    assert sorted(summary["dead_devices"]) == sorted(
        ["5 mm green diffuse LED", "5 mm red diffuse LED", "3 mm deep red LED"])


def test_every_device_has_eight_cells(devices):
    assert all(len(d.matrix) == 8 for d in devices)
    assert responsivity_table(devices).shape == (10, 4, 2)


@pytest.mark.parametrize("name, kind, terminal, expected", [
    ("5 mm true green LED", "laser532", "cathode", ResponseClass.UNEXPECTED),
    ("5 mm UV LED", "white", "cathode", ResponseClass.NONE),
    ("5 mm yellow diffuse LED", "laser640", "cathode", ResponseClass.UNEXPLAINABLE),
])
def test_response_matrix(devices, name, kind, terminal, expected):
    response, _ = response_matrix(find_device(devices, name), kind, terminal)
    assert response is expected


def test_responsivity_iff_response(devices):
    for d in devices:
        for cell in d.matrix.values():
            assert (cell.responsivity > 0) == (cell.response is not ResponseClass.NONE)


def test_roundtrip_field_for_field():
    doc = raw_library()
    text = bundled_library_text()
    again = dump_device_library(load_device_library(text), load_boards(text))
    assert again == doc


def test_seven_cells_is_a_schema_error():
    doc = raw_library()
    del doc["devices"][0]["matrix"]["white"]["cathode"]
    with pytest.raises(SchemaError) as err:
        load_device_library(doc)
    assert err.value.path == "$.devices[0].matrix"


def test_filter_contradiction_is_an_invariant_error():
    doc = raw_library()
    red = next(d for d in doc["devices"] if d["name"] == "5 mm red diffuse LED")
    red["matrix"]["laser532"]["anode"] = {"class": "expected", "responsivity": 0.1}
    with pytest.raises(InvariantError):
        load_device_library(doc)


def test_responsivity_class_contradiction():
    doc = raw_library()
    doc["devices"][1]["matrix"]["laser532"]["anode"]["responsivity"] = 0.2
    with pytest.raises(InvariantError):
        load_device_library(doc)


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d["devices"][2].pop("name"), "$.devices[2]"),
    (lambda d: d["devices"][0]["matrix"]["laser405"]["anode"].update({"class": "bright"}),
     "$.devices[0].matrix.laser405.anode.class"),
    (lambda d: d["devices"][0].update({"size_mm": "5"}), "$.devices[0].size_mm"),
])
def test_schema_error_paths(mutate, path):
    doc = raw_library()
    mutate(doc)
    with pytest.raises(SchemaError) as err:
        load_device_library(doc)
    assert err.value.path == path


def test_bad_json():
    with pytest.raises(SchemaError):
        load_device_library("{not json")


def test_env_library(tmp_path, monkeypatch):
    doc = raw_library()
    doc["devices"] = doc["devices"][:3]
    path = tmp_path / "lib.json"
    path.write_text(json.dumps(doc))
    monkeypatch.setenv("LUMEN_DEVICE_LIB", str(path))
    assert len(load_device_library(read_library_text())) == 3


def test_find_device_fuzzy(devices):
    assert find_device(devices, "5mm blue").name == "5 mm blue LED"
    assert find_device(devices, "red diffuse").name == "5 mm red diffuse LED"
    with pytest.raises(KeyError):
        find_device(devices, "red")
    with pytest.raises(KeyError):
        find_device(devices, "infrared")


def test_photocurrent_examples(devices):
    uv = find_device(devices, "UV")
    assert photocurrent(uv, "cathode", "white", 1000.0) == 0.0
    assert photocurrent(uv, "anode", "white", 0.0) == 0.0
    assert photocurrent(uv, "anode", "white", 2.0) == 2 * photocurrent(uv, "anode", "white", 1.0)


@given(st.integers(0, 9), st.sampled_from(list(ExcitationKind)), st.sampled_from(list(Terminal)),
       st.floats(0, 1e4), st.floats(0, 1e4))
def test_photocurrent_linear_nonnegative(devices, idx, kind, terminal, x, y):
    d = devices[idx]
    px, py = photocurrent(d, terminal, kind, x), photocurrent(d, terminal, kind, y)
    assert px >= 0 and py >= 0
    assert photocurrent(d, terminal, kind, x + y) == pytest.approx(px + py, rel=1e-12, abs=1e-300)


def test_photocurrent_array(blue):
    out = photocurrent(blue, "anode", "laser640", np.array([0.0, 1.0, 2.0]))
    assert out.tolist() == [0.0, 0.1, 0.2]
    with pytest.raises(ValueError):
        photocurrent(blue, "anode", "laser640", -1.0)


def test_device_to_dict_is_a_copy(blue):
    doc = device_to_dict(blue)
    before = copy.deepcopy(doc)
    doc["matrix"]["white"]["anode"]["class"] = "none"
    assert device_to_dict(blue) == before
