"""LED photo-response library.

Each device carries an empirical 4 x 2 response matrix (excitation source by
terminal). Lookups never compute anything: the matrix is ground truth. The
responsivity magnitudes in the bundled library are a synthetic calibration
(0.1 A per W/m^2 for expected/unexpected cells, 0.01 for unexplainable
ones), not measurements.
"""

import enum
import json
import os
from dataclasses import dataclass
from importlib import resources

import numpy as np

from ._validation import check_nonnegative_array
from .exceptions import InvariantError, SchemaError
from .gpio import BoardWiring, Terminal

SCHEMA_ID = "lumen.led-library/1"
ENV_LIBRARY = "LUMEN_DEVICE_LIB"


class ExcitationKind(enum.Enum):
    LASER_405 = "laser405"
    LASER_532 = "laser532"
    LASER_640 = "laser640"
    WHITE_LED = "white"

    @property
    def wavelength_nm(self):
        """Centre wavelength in nm, or None for the broadband white source."""
        return _WAVELENGTHS[self]


_WAVELENGTHS = {
    ExcitationKind.LASER_405: 405,
    ExcitationKind.LASER_532: 532,
    ExcitationKind.LASER_640: 640,
    ExcitationKind.WHITE_LED: None,
}


class ResponseClass(enum.Enum):
    NONE = "none"
    EXPECTED = "expected"
    UNEXPECTED = "unexpected"
    UNEXPLAINABLE = "unexplainable"


GLYPHS = {
    ResponseClass.NONE: "·",
    ResponseClass.EXPECTED: "E",
    ResponseClass.UNEXPECTED: "U",
    ResponseClass.UNEXPLAINABLE: "X",
}


@dataclass(frozen=True)
class ExcitationSource:
    kind: ExcitationKind
    power_mw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ExcitationKind(self.kind))
        if not self.power_mw >= 0:
            raise ValueError("power_mw must be >= 0")

    @property
    def wavelength_nm(self):
        return self.kind.wavelength_nm


@dataclass(frozen=True)
class Cell:
    response: ResponseClass
    responsivity: float


@dataclass(frozen=True)
class LedDevice:
    name: str
    size_mm: float
    emission_nm: object  # number or "broadband"
    package_filter: tuple = None
    matrix: dict = None  # (ExcitationKind, Terminal) -> Cell

    @property
    def responsive_cells(self):
        return sum(1 for c in self.matrix.values() if c.response is not ResponseClass.NONE)

    @property
    def exploitable(self):
        return self.responsive_cells > 0

    def passes_filter(self, kind):
        if self.package_filter is None or kind.wavelength_nm is None:
            return True
        lo, hi = self.package_filter
        return lo <= kind.wavelength_nm <= hi


def _require(doc, key, path, types):
    if not isinstance(doc, dict) or key not in doc:
        raise SchemaError(path, f"missing field {key!r}")
    value = doc[key]
    if not isinstance(value, types) or isinstance(value, bool):
        raise SchemaError(f"{path}.{key}", f"expected {_typename(types)}, got {type(value).__name__}")
    return value


def _typename(types):
    if isinstance(types, tuple):
        return " or ".join(t.__name__ for t in types)
    return types.__name__


def _parse_cell(doc, path):
    if not isinstance(doc, dict):
        raise SchemaError(path, "cell must be an object")
    raw_class = _require(doc, "class", path, str)
    try:
        response = ResponseClass(raw_class)
    except ValueError:
        raise SchemaError(f"{path}.class", f"unknown response class {raw_class!r}") from None
    responsivity = float(_require(doc, "responsivity", path, (int, float)))
    if responsivity < 0:
        raise SchemaError(f"{path}.responsivity", "must be >= 0")
    if (responsivity > 0) != (response is not ResponseClass.NONE):
        raise InvariantError(f"{path}: responsivity > 0 iff class != none "
                             f"(class={response.value}, responsivity={responsivity})")
    return Cell(response, responsivity)


def _parse_device(doc, path):
    name = _require(doc, "name", path, str)
    size = _require(doc, "size_mm", path, (int, float))
    emission = _require(doc, "emission_nm", path, (int, float, str))
    if isinstance(emission, str) and emission != "broadband":
        raise SchemaError(f"{path}.emission_nm", "string value must be 'broadband'")
    if "filter" not in doc:
        raise SchemaError(path, "missing field 'filter'")
    filt = doc["filter"]
    if filt is not None:
        if (not isinstance(filt, list) or len(filt) != 2
                or not all(isinstance(x, (int, float)) for x in filt) or not filt[0] < filt[1]):
            raise SchemaError(f"{path}.filter", "expected [lo, hi] with lo < hi, or null")
        filt = tuple(filt)

    raw_matrix = _require(doc, "matrix", path, dict)
    cells = {}
    for key, per_terminal in raw_matrix.items():
        try:
            kind = ExcitationKind(key)
        except ValueError:
            raise SchemaError(f"{path}.matrix.{key}", "unknown excitation source") from None
        if not isinstance(per_terminal, dict):
            raise SchemaError(f"{path}.matrix.{key}", "expected an object keyed by terminal")
        for tkey, cell_doc in per_terminal.items():
            try:
                terminal = Terminal(tkey)
            except ValueError:
                raise SchemaError(f"{path}.matrix.{key}.{tkey}", "unknown terminal") from None
            cells[kind, terminal] = _parse_cell(cell_doc, f"{path}.matrix.{key}.{tkey}")
    if len(cells) != len(ExcitationKind) * len(Terminal):
        raise SchemaError(f"{path}.matrix", f"expected 8 cells, found {len(cells)}")

    device = LedDevice(name, size, emission, filt, cells)
    for (kind, terminal), cell in cells.items():
        if cell.response is not ResponseClass.NONE and not device.passes_filter(kind):
            raise InvariantError(
                f"{path}.matrix.{kind.value}.{terminal.value}: the package filter "
                f"{list(filt)} blocks {kind.wavelength_nm} nm, so the cell must be 'none'"
            )
    return device


def _as_document(document):
    if isinstance(document, (str, bytes)):
        try:
            return json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError("$", f"not valid JSON: {exc}") from None
    return document


def _device_list(doc):
    if isinstance(doc, list):
        return doc, "$"
    if isinstance(doc, dict) and isinstance(doc.get("devices"), list):
        return doc["devices"], "$.devices"
    raise SchemaError("$", "expected a list of devices or an object with a 'devices' list")


def load_device_library(document):
    """Parse and validate a device library (JSON text, or an already-decoded object)."""
    doc = _as_document(document)
    entries, base = _device_list(doc)
    devices = [_parse_device(entry, f"{base}[{i}]") for i, entry in enumerate(entries)]
    names = [d.name for d in devices]
    if len(set(names)) != len(names):
        raise InvariantError("device names must be unique")
    return devices


def load_boards(document):
    doc = _as_document(document)
    if not isinstance(doc, dict):
        return []
    boards = []
    for i, entry in enumerate(doc.get("boards", [])):
        try:
            boards.append(BoardWiring.from_dict(entry))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"$.boards[{i}]", str(exc)) from None
    return boards


def device_to_dict(device):
    matrix = {}
    for kind in ExcitationKind:
        matrix[kind.value] = {
            t.value: {"class": device.matrix[kind, t].response.value,
                      "responsivity": device.matrix[kind, t].responsivity}
            for t in Terminal
        }
    return {
        "name": device.name,
        "size_mm": device.size_mm,
        "emission_nm": device.emission_nm,
        "filter": list(device.package_filter) if device.package_filter is not None else None,
        "matrix": matrix,
    }


def dump_device_library(devices, boards=None):
    doc = {"schema": SCHEMA_ID, "devices": [device_to_dict(d) for d in devices]}
    if boards is not None:
        doc["boards"] = [b.to_dict() for b in boards]
    return doc


def bundled_library_text():
    return resources.files("lumen").joinpath("data/led_library.json").read_text(encoding="utf-8")


def read_library_text(path=None):
    """Text of the library at ``path``, else ``$LUMEN_DEVICE_LIB``, else the bundled one."""
    path = path or os.environ.get(ENV_LIBRARY)
    if not path:
        return bundled_library_text()
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def bundled_devices():
    return load_device_library(bundled_library_text())


def _normalise(name):
    return "".join(ch for ch in name.lower() if ch.isalnum()).removesuffix("led")


def find_device(devices, name):
    """Look a device up by name, ignoring case, spaces and a trailing 'LED'."""
    key = _normalise(name)
    exact = [d for d in devices if _normalise(d.name) == key]
    if exact:
        return exact[0]
    partial = [d for d in devices if key in _normalise(d.name)]
    if len(partial) == 1:
        return partial[0]
    if not partial:
        raise KeyError(f"no device matches {name!r}")
    raise KeyError(f"{name!r} is ambiguous: {', '.join(d.name for d in partial)}")


def response_matrix(device, excitation, terminal):
    cell = device.matrix[ExcitationKind(excitation), Terminal(terminal)]
    return cell.response, cell.responsivity


def photocurrent(device, terminal, excitation, irradiance_w_m2):
    """Photocurrent in amps: responsivity times irradiance, zero for non-responsive cells."""
    if isinstance(excitation, ExcitationSource):
        excitation = excitation.kind
    irradiance = check_nonnegative_array(irradiance_w_m2, "irradiance_w_m2")
    _, responsivity = response_matrix(device, excitation, terminal)
    current = responsivity * irradiance
    if current.ndim == 0:
        return float(current)
    return current


def render_matrix(devices):
    """Plain-text response table with one row per device and E/U/X/· glyphs."""
    name_w = max(len(d.name) for d in devices)
    head_sources = "  ".join(f"{k.value:^7}" for k in ExcitationKind)
    sub = "  ".join(f"{'a':>3} {'c':<3}" for _ in ExcitationKind)
    lines = [f"{'device':<{name_w}}  {head_sources}", f"{'':<{name_w}}  {sub}"]
    for d in devices:
        cells = "  ".join(
            f"{GLYPHS[d.matrix[k, Terminal.ANODE].response]:>3} "
            f"{GLYPHS[d.matrix[k, Terminal.CATHODE].response]:<3}"
            for k in ExcitationKind
        )
        lines.append(f"{d.name:<{name_w}}  {cells}")
    lines.append("legend: E expected, U unexpected, X unexplainable, · none")
    return "\n".join(lines)


def library_summary(devices):
    exploitable = sum(d.exploitable for d in devices)
    cells = sum(d.responsive_cells for d in devices)
    return {
        "devices": len(devices),
        "exploitable": exploitable,
        "responsive_cells": cells,
        "exploitable_fraction": exploitable / len(devices) if devices else 0.0,
        "dead_devices": [d.name for d in devices if not d.exploitable],
    }


def responsivity_table(devices):
    """(n_devices, 4, 2) array of responsivities, handy for vectorised what-ifs."""
    return np.array([[[d.matrix[k, t].responsivity for t in Terminal] for k in ExcitationKind]
                     for d in devices])
