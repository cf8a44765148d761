"""GPIO pin state and the two-pin LED sensing circuit.

An LED wired straight between two GPIO pins (the "direct" topology) can be
turned into a light sensor by reconfiguring both pins as inputs and enabling
opposite pull resistors. Under illumination the LED behaves as a current sink
between the two terminal nodes and drags the pulled-up node towards ground.
"""

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import FloatingNode, InvalidConfig

DEFAULT_PULL_OHMS = 35_000.0


class Mode(enum.Enum):
    DIGITAL_OUTPUT = "output"
    DIGITAL_INPUT = "input"


class Drive(enum.Enum):
    HIGH = "high"
    LOW = "low"
    NOT_DRIVEN = "not_driven"


class Pull(enum.Enum):
    NONE = "none"
    UP = "up"
    DOWN = "down"


class Logic(enum.IntEnum):
    """Digital reading of an input pin; the integer values make majority votes a sum."""

    LOW = -1
    INDETERMINATE = 0
    HIGH = 1


class SensorMode(enum.Enum):
    PHOTOVOLTAIC = "photovoltaic"
    PHOTOCONDUCTIVE = "photoconductive"


class Topology(enum.Enum):
    DIRECT = "direct"  # LED between two GPIOs, no buffer
    BUFFERED = "buffered"  # LED behind a driver/inverter and series resistor


class Terminal(enum.Enum):
    ANODE = "anode"
    CATHODE = "cathode"


@dataclass(frozen=True)
class SupplyRails:
    vdd: float = 3.3
    v_ih: float = None
    v_il: float = None

    def __post_init__(self):
        if self.v_ih is None:
            object.__setattr__(self, "v_ih", round(0.7 * self.vdd, 9))
        if self.v_il is None:
            object.__setattr__(self, "v_il", round(0.3 * self.vdd, 9))
        if not 0 < self.v_il < self.v_ih < self.vdd:
            raise InvalidConfig(
                f"rails must satisfy 0 < v_il < v_ih < vdd, got "
                f"v_il={self.v_il}, v_ih={self.v_ih}, vdd={self.vdd}"
            )


@dataclass(frozen=True)
class PhotoconductiveBiasRef:
    """Reference reverse-bias photodiode circuit: pull-up, protection resistor, bias."""

    pull_up: float = 10_000.0
    series_protect: float = 100.0
    bias: float = 0.033


@dataclass(frozen=True)
class PinConfig:
    pin_id: int
    mode: Mode
    drive: Drive = None
    pull: Pull = Pull.NONE
    pull_resistance: float = None


@dataclass(frozen=True)
class ResolvedNode:
    v_anode: float
    v_cathode: float
    i_loop: float

    def voltage(self, terminal):
        return self.v_anode if Terminal(terminal) is Terminal.ANODE else self.v_cathode


def configure_pin(config, rails=None):
    """Validate ``config`` and fill in defaults.

    Inputs get ``Drive.NOT_DRIVEN``; outputs with no drive default to LOW; an
    enabled pull with no resistance gets the 35 kOhm default.
    """
    if rails is None:
        rails = SupplyRails()
    mode = Mode(config.mode)
    pull = Pull(config.pull)
    drive = config.drive
    if mode is Mode.DIGITAL_INPUT:
        if drive not in (None, Drive.NOT_DRIVEN):
            raise InvalidConfig(f"pin {config.pin_id}: an input cannot be driven {Drive(drive).name}")
        drive = Drive.NOT_DRIVEN
    else:
        drive = Drive.LOW if drive is None else Drive(drive)
        if drive is Drive.NOT_DRIVEN:
            raise InvalidConfig(f"pin {config.pin_id}: an output must drive HIGH or LOW")

    resistance = config.pull_resistance
    if pull is not Pull.NONE:
        if resistance is None:
            resistance = DEFAULT_PULL_OHMS
        if not resistance > 0:
            raise InvalidConfig(f"pin {config.pin_id}: pull_resistance must be > 0")
        resistance = float(resistance)
    return replace(config, mode=mode, drive=drive, pull=pull, pull_resistance=resistance)


def check_board_pins(pins):
    """Configure every pin of a board description; pin ids must be unique."""
    seen = set()
    out = []
    for pin in pins:
        if pin.pin_id in seen:
            raise InvalidConfig(f"duplicate pin_id {pin.pin_id}")
        seen.add(pin.pin_id)
        out.append(configure_pin(pin))
    return out


def _thevenin(pin, vdd):
    # (source voltage, series resistance); inf resistance means floating
    if pin.mode is Mode.DIGITAL_OUTPUT:
        return (vdd if pin.drive is Drive.HIGH else 0.0), 0.0
    if pin.pull is Pull.UP:
        return vdd, pin.pull_resistance
    if pin.pull is Pull.DOWN:
        return 0.0, pin.pull_resistance
    return math.nan, math.inf


def resolve_led_node(pin_a, pin_b, photocurrent, mode=SensorMode.PHOTOVOLTAIC, rails=None,
                     topology=Topology.DIRECT, bias_ref=None):
    """Solve the terminal voltages of an LED wired between ``pin_a`` (anode) and ``pin_b`` (cathode).

    ``photocurrent`` may be a scalar or a 1-D array; the result fields follow suit.
    The illuminated LED sinks current from the higher-potential node to the
    lower one. The loop current is capped by what the sense-side resistor can
    supply before the node reaches ground; both nodes are clamped to the rails.
    In photoconductive mode the reverse-biased junction can only pull the node
    by the reference bias voltage, so no logic threshold is ever crossed.
    """
    rails = rails or SupplyRails()
    bias_ref = bias_ref or PhotoconductiveBiasRef()
    pin_a = configure_pin(pin_a, rails)
    pin_b = configure_pin(pin_b, rails)
    mode = SensorMode(mode)
    vdd = rails.vdd

    p = np.asarray(photocurrent, dtype=float)
    if np.any(p < 0) or np.any(~np.isfinite(p)):
        raise ValueError("photocurrent must be finite and non-negative")
    scalar = p.ndim == 0

    if Topology(topology) is Topology.BUFFERED and (
        pin_a.mode is Mode.DIGITAL_INPUT or pin_b.mode is Mode.DIGITAL_INPUT
    ):
        raise FloatingNode("buffered LED: the driver isolates the LED from the GPIO inputs")

    va, ra = _thevenin(pin_a, vdd)
    vb, rb = _thevenin(pin_b, vdd)
    if math.isinf(ra) and math.isinf(rb):
        raise FloatingNode("neither pin drives or pulls the LED: no DC path")

    def pack(v_anode, v_cathode, i_loop):
        if scalar:
            return ResolvedNode(float(v_anode), float(v_cathode), float(i_loop))
        shape = p.shape
        return ResolvedNode(np.broadcast_to(v_anode, shape).astype(float),
                            np.broadcast_to(v_cathode, shape).astype(float),
                            np.broadcast_to(i_loop, shape).astype(float))

    # One side floating: no loop, the floating terminal follows the other.
    if math.isinf(ra):
        return pack(vb, vb, 0.0)
    if math.isinf(rb):
        return pack(va, va, 0.0)
    if va == vb:
        return pack(va, vb, 0.0)

    anode_high = va > vb
    v_hi, r_hi, v_lo, r_lo = (va, ra, vb, rb) if anode_high else (vb, rb, va, ra)
    if r_hi > 0:
        limit, r_sense = v_hi / r_hi, r_hi
    elif r_lo > 0:
        limit, r_sense = (vdd - v_lo) / r_lo, r_lo
    else:
        # both pins driven: stiff drivers swamp any photocurrent
        return pack(va, vb, 0.0)

    i = np.minimum(p, limit)
    if mode is SensorMode.PHOTOCONDUCTIVE:
        i = np.minimum(i, bias_ref.bias / r_sense)
    node_hi = np.clip(v_hi - i * r_hi, 0.0, vdd)
    node_lo = np.clip(v_lo + i * r_lo, 0.0, vdd)
    if anode_high:
        return pack(node_hi, node_lo, i)
    return pack(node_lo, node_hi, i)


def read_logic(voltage, rails=None):
    """Threshold a voltage (scalar or array) into :class:`Logic` levels."""
    rails = rails or SupplyRails()
    v = np.asarray(voltage, dtype=float)
    out = np.where(v >= rails.v_ih, Logic.HIGH,
                   np.where(v <= rails.v_il, Logic.LOW, Logic.INDETERMINATE)).astype(np.int8)
    if v.ndim == 0:
        return Logic(int(out))
    return out


def sense_terminal(pin_a, pin_b):
    """Which LED terminal the attacker reads: the pulled-up input pin."""
    for terminal, pin in ((Terminal.ANODE, pin_a), (Terminal.CATHODE, pin_b)):
        if pin.mode is Mode.DIGITAL_INPUT and pin.pull is Pull.UP:
            return terminal
    raise InvalidConfig("no pulled-up input pin to sense from")


@dataclass(frozen=True)
class BoardWiring:
    """An LED indicator on a board: which GPIOs it sits between and how it is wired."""

    name: str = "direct-led"
    topology: Topology = Topology.DIRECT
    anode_pin: int = 2
    cathode_pin: int = 3
    sense: Terminal = Terminal.ANODE
    pull_resistance: float = DEFAULT_PULL_OHMS
    rails: SupplyRails = field(default_factory=SupplyRails)

    def __post_init__(self):
        object.__setattr__(self, "topology", Topology(self.topology))
        object.__setattr__(self, "sense", Terminal(self.sense))
        if self.anode_pin == self.cathode_pin:
            raise InvalidConfig("anode and cathode must use different pins")

    def designer_pins(self):
        """The intended indicator wiring: anode driven HIGH, cathode driven LOW."""
        return (
            configure_pin(PinConfig(self.anode_pin, Mode.DIGITAL_OUTPUT, Drive.HIGH), self.rails),
            configure_pin(PinConfig(self.cathode_pin, Mode.DIGITAL_OUTPUT, Drive.LOW), self.rails),
        )

    def attack_pins(self):
        """Both pins reconfigured as inputs with opposing pulls; the sense pin is pulled up."""
        up = Pull.UP
        down = Pull.DOWN
        a_pull, c_pull = (up, down) if self.sense is Terminal.ANODE else (down, up)
        return (
            configure_pin(PinConfig(self.anode_pin, Mode.DIGITAL_INPUT, pull=a_pull,
                                    pull_resistance=self.pull_resistance), self.rails),
            configure_pin(PinConfig(self.cathode_pin, Mode.DIGITAL_INPUT, pull=c_pull,
                                    pull_resistance=self.pull_resistance), self.rails),
        )

    def to_dict(self):
        return {
            "name": self.name,
            "topology": self.topology.value,
            "anode_pin": self.anode_pin,
            "cathode_pin": self.cathode_pin,
            "sense": self.sense.value,
            "pull_resistance": self.pull_resistance,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(name=doc["name"], topology=doc.get("topology", "direct"),
                   anode_pin=doc.get("anode_pin", 2), cathode_pin=doc.get("cathode_pin", 3),
                   sense=doc.get("sense", "anode"),
                   pull_resistance=float(doc.get("pull_resistance", DEFAULT_PULL_OHMS)))
