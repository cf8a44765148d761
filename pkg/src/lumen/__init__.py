"""Simulation of optical fault and data injection into microcontrollers through indicator LEDs."""

__version__ = "0.1.0"

from .channel import (ELECTRO_OPTIC, POCKELS, ChannelParams, IrradianceTrace, Modulator,
                      ModulatorKind, OokModulator, OpticalChannel, apply_channel, modulate_ook)
from .core import BusInjection, Program, assemble, run_with_injection, step
from .devices import (ExcitationKind, LedDevice, ResponseClass, bundled_devices, find_device,
                      library_summary, load_device_library, photocurrent)
from .gpio import (BoardWiring, Logic, Mode, Pull, SensorMode, SupplyRails, Terminal,
                   Topology, configure_pin, read_logic, resolve_led_node)
from .link import (LedReceiver, LinkReport, crc16, decode_frame, encode_frame, manchester_decode,
                   manchester_encode, measure_link, recover_bits)
from .sweep import (GoldenTraceDetector, InjectionPath, SweepConfig, VulnerabilityProfile,
                    golden_trace, novelty_score, run_sweep, summarize)
