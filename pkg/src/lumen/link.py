"""Covert-channel protocol stack over an LED sensed through GPIO pulls.

Frame layout (MSB first)::

    preamble(16, 1010...) | sync(8, 0x7E) | length(8) | payload(8*len) | crc16(16) | flag(8, 0x7E)

The CRC is CRC-16/CCITT-FALSE over ``length || payload``. Frames are
Manchester coded (1 -> HL, 0 -> LH) and keyed onto the laser; light pulls the
sense pin LOW, so the receiver inverts what it reads.
"""

import binascii
import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_bits, check_int
from .channel import IrradianceTrace, apply_channel, modulate_ook
from .devices import photocurrent
from .exceptions import FrameError, InvalidSymbolPair, NoPreamble, PayloadTooLong
from .gpio import BoardWiring, SensorMode, SupplyRails, Terminal, read_logic, resolve_led_node

PREAMBLE_BITS = 16
SYNC_WORD = 0x7E
HEADER_BITS = PREAMBLE_BITS + 8 + 8
OVERHEAD_BITS = HEADER_BITS + 16 + 8
MAX_PAYLOAD = 255
DEFAULT_SAMPLES_PER_SYMBOL = 4
DEFAULT_PEAK_W_M2 = 0.01


def crc16(data):
    """CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection, no final xor)."""
    return binascii.crc_hqx(bytes(data), 0xFFFF)


def _to_bits(data):
    return np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))


PREAMBLE = np.array([1, 0] * (PREAMBLE_BITS // 2), dtype=np.uint8)
SYNC = _to_bits([SYNC_WORD])


@dataclass(frozen=True)
class Frame:
    payload: bytes

    @property
    def length(self):
        return len(self.payload)

    @property
    def crc(self):
        return crc16(bytes([self.length]) + self.payload)

    @property
    def n_bits(self):
        return OVERHEAD_BITS + 8 * self.length


def encode_frame(payload):
    payload = bytes(payload)
    if len(payload) > MAX_PAYLOAD:
        raise PayloadTooLong(f"payload is {len(payload)} bytes; the length field holds at most 255")
    body = bytes([len(payload)]) + payload
    crc = crc16(body)
    return np.concatenate([PREAMBLE, SYNC, _to_bits(body + crc.to_bytes(2, "big")), SYNC])


def decode_frame(bits):
    """Parse one frame starting at ``bits[0]``; returns the payload or raises :class:`FrameError`."""
    bits = check_bits(bits)
    if len(bits) < OVERHEAD_BITS:
        raise FrameError(f"need at least {OVERHEAD_BITS} bits, got {len(bits)}")
    if not np.array_equal(bits[:PREAMBLE_BITS], PREAMBLE):
        raise FrameError("bad preamble")
    if not np.array_equal(bits[PREAMBLE_BITS:PREAMBLE_BITS + 8], SYNC):
        raise FrameError("sync word not found")
    length = int(np.packbits(bits[PREAMBLE_BITS + 8:HEADER_BITS])[0])
    total = OVERHEAD_BITS + 8 * length
    if len(bits) < total:
        raise FrameError(f"truncated frame: length field says {total} bits, got {len(bits)}")
    body = np.packbits(bits[PREAMBLE_BITS + 8:total - 24]).tobytes()
    received_crc = int.from_bytes(np.packbits(bits[total - 24:total - 8]).tobytes(), "big")
    if crc16(body) != received_crc:
        raise FrameError("CRC mismatch")
    if not np.array_equal(bits[total - 8:total], SYNC):
        raise FrameError("closing flag not found")
    return body[1:]


def manchester_encode(bits):
    """1 -> (1, 0), 0 -> (0, 1); HIGH is 1, LOW is 0."""
    bits = check_bits(bits)
    symbols = np.empty(2 * len(bits), dtype=np.uint8)
    symbols[0::2] = bits
    symbols[1::2] = 1 - bits
    return symbols


def manchester_decode(symbols):
    symbols = check_bits(symbols, "symbols")
    if len(symbols) % 2:
        raise ValueError("Manchester symbol stream must have even length")
    first, second = symbols[0::2], symbols[1::2]
    bad = np.flatnonzero(first == second)
    if bad.size:
        raise InvalidSymbolPair(int(bad[0]) * 2)
    return first.copy()


def _sync_template(samples_per_symbol):
    chips = manchester_encode(np.concatenate([PREAMBLE, SYNC]))
    return np.repeat(chips.astype(np.int32) * 2 - 1, samples_per_symbol)


def align(logic_samples, samples_per_symbol=DEFAULT_SAMPLES_PER_SYMBOL):
    """Sample offset of the first frame, by correlating against the preamble+sync pattern.

    Only offsets within four preamble lengths of the start are considered.
    """
    x = np.asarray(logic_samples, dtype=np.int32)
    template = _sync_template(samples_per_symbol)
    span = 4 * 2 * PREAMBLE_BITS * samples_per_symbol
    window = x[:span + len(template)]
    if len(window) < len(template):
        raise NoPreamble("stream shorter than the preamble")
    scores = np.correlate(window, template, mode="valid")
    best = int(np.argmax(scores))
    if scores[best] < len(template) // 2:
        raise NoPreamble("no preamble within the search window")
    return best


def recover_bits(logic_samples, samples_per_symbol=DEFAULT_SAMPLES_PER_SYMBOL, *, invert=False):
    """Turn oversampled logic readings back into data bits.

    Each Manchester symbol is decided by majority vote over its window, with
    INDETERMINATE samples abstaining; a tied window repeats the previous
    symbol. An illegal pair (HH or LL) is settled by comparing the two
    half-bit vote totals.
    """
    check_int(samples_per_symbol, "samples_per_symbol", min_value=1)
    x = np.asarray(logic_samples, dtype=np.int8).astype(np.int32)
    if invert:
        x = -x
    start = align(x, samples_per_symbol)
    # a trailing window that is at least half present still votes; the padding abstains
    n_symbols = (len(x) - start + samples_per_symbol // 2) // samples_per_symbol
    n_symbols -= n_symbols % 2
    if n_symbols == 0:
        return np.zeros(0, dtype=np.uint8)
    body = x[start:start + n_symbols * samples_per_symbol]
    body = np.pad(body, (0, n_symbols * samples_per_symbol - len(body)))
    votes = body.reshape(n_symbols, samples_per_symbol).sum(axis=1)

    decided = np.flatnonzero(votes != 0)
    fill = np.zeros(n_symbols, dtype=np.intp)
    fill[decided] = decided
    fill = np.maximum.accumulate(fill)
    symbols = np.sign(votes[fill])
    if votes[0] == 0:
        # nothing before the first symbol to copy; every frame opens with HIGH
        lead = decided[0] if decided.size else n_symbols
        symbols[:lead] = 1
    symbols = (symbols > 0).astype(np.uint8)

    first, second = symbols[0::2], symbols[1::2]
    bits = first.copy()
    illegal = first == second
    if illegal.any():
        soft = votes[0::2] - votes[1::2]
        bits[illegal & (soft > 0)] = 1
        bits[illegal & (soft < 0)] = 0
    return bits


class LedReceiver(TransformerMixin, BaseEstimator):
    """IrradianceTrace at the LED -> logic samples read on the board's sense pin."""

    def __init__(self, device=None, terminal="anode", excitation="laser640", board=None,
                 mode="photovoltaic", rails=None):
        self.device = device
        self.terminal = terminal
        self.excitation = excitation
        self.board = board
        self.mode = mode
        self.rails = rails

    def fit(self, X=None, y=None):
        if self.device is None:
            raise ValueError("LedReceiver needs a device")
        return self

    def _board(self):
        if self.board is not None:
            return self.board
        return BoardWiring(sense=Terminal(self.terminal), rails=self.rails or SupplyRails())

    def transform(self, X):
        samples = X.samples if isinstance(X, IrradianceTrace) else np.asarray(X, dtype=float)
        board = self._board()
        rails = self.rails or board.rails
        current = photocurrent(self.device, self.terminal, self.excitation, samples)
        anode, cathode = board.attack_pins()
        node = resolve_led_node(anode, cathode, current, SensorMode(self.mode), rails, board.topology)
        return read_logic(node.voltage(board.sense), rails)


@dataclass
class FrameResult:
    frame_idx: int
    bits: int
    errors: int
    ok: bool


@dataclass
class LinkReport:
    raw_bit_rate_hz: float
    goodput_bit_s: float
    bit_errors: int
    bits_total: int
    ber: float
    frames_sent: int
    frames_ok: int
    frames: list = field(default_factory=list)

    def to_dict(self, include_frames=False):
        doc = asdict(self)
        if not include_frames:
            doc.pop("frames")
        return doc

    def to_json(self, include_frames=False):
        return json.dumps(self.to_dict(include_frames), indent=2, sort_keys=True) + "\n"

    def frames_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["frame_idx", "bits", "errors", "ok"])
        for f in self.frames:
            writer.writerow([f.frame_idx, f.bits, f.errors, int(f.ok)])
        return buf.getvalue()


def measure_link(payloads, bit_rate_hz, modulator, channel, device, terminal="anode",
                 excitation="laser640", board=None, *, peak_w_m2=DEFAULT_PEAK_W_M2,
                 samples_per_symbol=DEFAULT_SAMPLES_PER_SYMBOL, mode=SensorMode.PHOTOVOLTAIC,
                 rails=None):
    """Send ``payloads`` back-to-back over the simulated optical link and count what survives.

    The whole burst is one continuous waveform; the receiver aligns once on the
    first preamble. Bits the receiver never produced count as errors, so a dead
    LED gives ``ber == 1`` and ``frames_ok == 0``.
    """
    terminal = Terminal(terminal)
    board = board or BoardWiring(sense=terminal, rails=rails or SupplyRails())
    rails = rails or board.rails
    frames = [encode_frame(p) for p in payloads]
    sent = np.concatenate(frames) if frames else np.zeros(0, dtype=np.uint8)

    chips = manchester_encode(sent)
    trace = modulate_ook(chips, bit_rate_hz, peak_w_m2, modulator,
                         samples_per_bit=2 * samples_per_symbol, chips_per_bit=2)
    received = apply_channel(trace, channel)

    receiver = LedReceiver(device, terminal, excitation, board, mode, rails)
    logic = receiver.transform(received)
    try:
        bits = recover_bits(logic, samples_per_symbol, invert=True) if len(sent) else sent
    except NoPreamble:
        bits = np.zeros(0, dtype=np.uint8)

    results = []
    good_bits = 0
    offset = 0
    for idx, (frame, payload) in enumerate(zip(frames, payloads)):
        n = len(frame)
        got = bits[offset:offset + n]
        errors = int(np.count_nonzero(got != frame[:len(got)])) + (n - len(got))
        try:
            ok = decode_frame(got) == bytes(payload)
        except FrameError:
            ok = False
        if ok:
            good_bits += 8 * len(payload)
        results.append(FrameResult(idx, n, errors, ok))
        offset += n

    bits_total = len(sent)
    bit_errors = sum(r.errors for r in results)
    duration = bits_total / bit_rate_hz if bits_total else 0.0
    return LinkReport(
        raw_bit_rate_hz=float(bit_rate_hz),
        goodput_bit_s=good_bits / duration if duration else 0.0,
        bit_errors=bit_errors,
        bits_total=bits_total,
        ber=bit_errors / bits_total if bits_total else 0.0,
        frames_sent=len(frames),
        frames_ok=sum(r.ok for r in results),
        frames=results,
    )


def frame_efficiency(payload_len):
    """Fraction of frame bits that carry payload."""
    return 8 * payload_len / (OVERHEAD_BITS + 8 * payload_len)

