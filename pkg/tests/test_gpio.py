import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lumen.exceptions import FloatingNode, InvalidConfig
from lumen.gpio import (BoardWiring, Drive, Logic, Mode, PinConfig, Pull, SensorMode, SupplyRails,
                        Terminal, Topology, configure_pin, read_logic, resolve_led_node,
                        sense_terminal)

RAILS = SupplyRails()


def attack(pull_up=35_000.0, pull_down=35_000.0):
    return (PinConfig(2, Mode.DIGITAL_INPUT, pull=Pull.UP, pull_resistance=pull_up),
            PinConfig(3, Mode.DIGITAL_INPUT, pull=Pull.DOWN, pull_resistance=pull_down))


def test_input_pin_never_drives():
    pin = configure_pin(PinConfig(1, Mode.DIGITAL_INPUT, pull=Pull.UP, pull_resistance=35_000))
    assert pin.drive is Drive.NOT_DRIVEN
    assert pin.pull_resistance == 35_000


def test_output_high_accepted_unchanged():
    cfg = PinConfig(1, Mode.DIGITAL_OUTPUT, Drive.HIGH)
    assert configure_pin(cfg) == cfg


def test_driven_input_rejected():
    with pytest.raises(InvalidConfig):
        configure_pin(PinConfig(1, Mode.DIGITAL_INPUT, Drive.HIGH))


def test_pull_defaults_and_validation():
    assert configure_pin(PinConfig(1, Mode.DIGITAL_INPUT, pull=Pull.DOWN)).pull_resistance == 35_000
    with pytest.raises(InvalidConfig):
        configure_pin(PinConfig(1, Mode.DIGITAL_INPUT, pull=Pull.UP, pull_resistance=0))
    with pytest.raises(InvalidConfig):
        SupplyRails(3.3, v_ih=1.0, v_il=2.0)


def test_dark_and_lit_sense_levels():
    a, c = attack()
    dark = resolve_led_node(a, c, 0.0)
    lit = resolve_led_node(a, c, 1e-3)
    assert dark.v_anode == pytest.approx(3.3)
    assert lit.v_anode == pytest.approx(0.0)
    assert read_logic(dark.v_anode) is Logic.HIGH
    assert read_logic(lit.v_anode) is Logic.LOW


def test_floating_pins():
    a = PinConfig(2, Mode.DIGITAL_INPUT)
    c = PinConfig(3, Mode.DIGITAL_INPUT)
    with pytest.raises(FloatingNode):
        resolve_led_node(a, c, 0.0)


def test_buffered_board_has_no_sense_node():
    board = BoardWiring(topology=Topology.BUFFERED)
    a, c = board.attack_pins()
    with pytest.raises(FloatingNode):
        resolve_led_node(a, c, 1e-3, topology=board.topology)


def test_designer_wiring_is_stiff():
    a, c = BoardWiring().designer_pins()
    node = resolve_led_node(a, c, np.array([0.0, 1.0]))
    assert np.all(node.v_anode == 3.3) and np.all(node.v_cathode == 0.0)


@pytest.mark.parametrize("volts, expected", [(3.3, Logic.HIGH), (0.0, Logic.LOW), (1.65, Logic.INDETERMINATE),
                                             (2.31, Logic.HIGH), (0.99, Logic.LOW)])
def test_read_logic(volts, expected):
    assert read_logic(volts, RAILS) is expected


def test_read_logic_vectorised():
    out = read_logic(np.array([0.0, 1.65, 3.3]))
    assert out.tolist() == [-1, 0, 1]


def test_sense_terminal_follows_pull_up():
    a, c = BoardWiring(sense=Terminal.CATHODE).attack_pins()
    assert sense_terminal(a, c) is Terminal.CATHODE


pulls = st.floats(1e3, 1e6)
currents = st.floats(0.0, 1.0)


@given(pulls, pulls, currents, currents, st.sampled_from(list(Terminal)))
def test_sense_node_non_increasing_in_photocurrent(r_up, r_down, p1, p2, sense):
    board = BoardWiring(sense=sense, pull_resistance=r_up)
    a, c = board.attack_pins()
    if sense is Terminal.ANODE:
        c = PinConfig(c.pin_id, c.mode, pull=c.pull, pull_resistance=r_down)
    else:
        a = PinConfig(a.pin_id, a.mode, pull=a.pull, pull_resistance=r_down)
    lo, hi = sorted((p1, p2))
    v_lo = resolve_led_node(a, c, lo).voltage(sense)
    v_hi = resolve_led_node(a, c, hi).voltage(sense)
    assert v_hi <= v_lo + 1e-12
    assert 0.0 <= v_hi <= RAILS.vdd


@settings(max_examples=200)
@given(pulls, st.lists(currents, min_size=1, max_size=50))
def test_photoconductive_never_switches(r_pull, ps):
    a, c = attack(r_pull, r_pull)
    node = resolve_led_node(a, c, np.array(ps), mode=SensorMode.PHOTOCONDUCTIVE)
    levels = read_logic(node.v_anode)
    assert np.all(levels == Logic.HIGH)


def test_photoconductive_full_current_range():
    a, c = attack()
    p = np.linspace(0.0, 1.0, 10_001)
    node = resolve_led_node(a, c, p, mode=SensorMode.PHOTOCONDUCTIVE)
    assert np.all(read_logic(node.v_anode) == Logic.HIGH)


def test_board_roundtrip():
    board = BoardWiring("x", Topology.BUFFERED, 4, 5, Terminal.CATHODE, 22_000.0)
    assert BoardWiring.from_dict(board.to_dict()) == board
