"""A miniature AVR-flavoured Harvard core with a force-low data-bus injector.

Every instruction takes four ticks: FETCH, DECODE, EXECUTE, WRITEBACK.
Bus transfers happen at fixed phases:

* FETCH     instruction word(s) from program memory
* EXECUTE   data-memory / stack / I/O reads, and the low byte of a taken branch target
* WRITEBACK register, SREG, data-memory, stack and I/O writes

An active injection ANDs its mask off every transfer in the tick; it can
clear bits but never set them. Program memory itself is never written.
Opcodes use the real AVR encodings for the supported subset, so a masked
instruction word may decode to a different instruction; anything outside the
subset executes as NOP.
"""

import enum
import functools
import random
import re
from dataclasses import dataclass, field

from ._validation import check_int, check_probability
from .exceptions import OperandRangeError, TickLimitExceeded, UnknownLabel, UnknownMnemonic


class Phase(enum.IntEnum):
    FETCH = 0
    DECODE = 1
    EXECUTE = 2
    WRITEBACK = 3


TICKS_PER_INSTRUCTION = 4
DATA_MEM_SIZE = 2048
SP_INIT = DATA_MEM_SIZE - 1
DEFAULT_SUSCEPTIBLE = frozenset({Phase.EXECUTE, Phase.WRITEBACK})
DEFAULT_TICK_LIMIT = 1_000_000

# I/O space (IN/OUT addresses)
PINB, DDRB, PORTB = 0x03, 0x04, 0x05
SPL, SPH, SREG = 0x3D, 0x3E, 0x3F
TRIGGER_PORT = PORTB

# SREG bits
C_FLAG, Z_FLAG, N_FLAG, V_FLAG, S_FLAG, H_FLAG = (1 << i for i in range(6))

MNEMONICS = ("NOP", "LDI", "MOV", "ADD", "SUB", "AND", "OR", "EOR",
             "LDS", "STS", "PUSH", "POP", "RJMP", "BRNE", "OUT", "IN")

_TWO_REG = {"MOV": 0x2C00, "ADD": 0x0C00, "SUB": 0x1800, "AND": 0x2000, "OR": 0x2800, "EOR": 0x2400}
_TWO_REG_BY_BASE = {v: k for k, v in _TWO_REG.items()}


@dataclass(frozen=True)
class Instruction:
    op: str
    d: int = 0  # destination register, or source register for STS/PUSH/OUT
    r: int = 0  # second source register
    k: int = 0  # immediate, data address, I/O address or relative branch offset
    line: int = 0

    @property
    def size(self):
        return 2 if self.op in ("LDS", "STS") else 1

    @property
    def is_trigger(self):
        return self.op == "OUT" and self.k == TRIGGER_PORT


NOP = Instruction("NOP")


def encode(ins):
    """Machine words for ``ins``."""
    op, d, r, k = ins.op, ins.d, ins.r, ins.k
    if op == "NOP":
        return (0x0000,)
    if op == "LDI":
        return (0xE000 | ((k & 0xF0) << 4) | ((d - 16) << 4) | (k & 0x0F),)
    if op in _TWO_REG:
        return (_TWO_REG[op] | ((r & 0x10) << 5) | (d << 4) | (r & 0x0F),)
    if op == "LDS":
        return (0x9000 | (d << 4), k)
    if op == "STS":
        return (0x9200 | (d << 4), k)
    if op == "PUSH":
        return (0x920F | (d << 4),)
    if op == "POP":
        return (0x900F | (d << 4),)
    if op == "RJMP":
        return (0xC000 | (k & 0x0FFF),)
    if op == "BRNE":
        return (0xF401 | ((k & 0x7F) << 3),)
    if op == "OUT":
        return (0xB800 | ((k & 0x30) << 5) | (d << 4) | (k & 0x0F),)
    if op == "IN":
        return (0xB000 | ((k & 0x30) << 5) | (d << 4) | (k & 0x0F),)
    raise UnknownMnemonic(ins.line, op)


def _signed(value, bits):
    return value - (1 << bits) if value & (1 << (bits - 1)) else value


def decode(word, next_word=0):
    """Decode a (possibly corrupted) instruction word; None when it is outside the subset."""
    if word == 0:
        return NOP
    d = (word >> 4) & 0x1F
    if word & 0xF000 == 0xE000:
        return Instruction("LDI", d=16 + ((word >> 4) & 0x0F), k=((word >> 4) & 0xF0) | (word & 0x0F))
    op = _TWO_REG_BY_BASE.get(word & 0xFC00)
    if op is not None:
        return Instruction(op, d=d, r=((word >> 5) & 0x10) | (word & 0x0F))
    low = word & 0xFE0F
    if low == 0x9000:
        return Instruction("LDS", d=d, k=next_word)
    if low == 0x9200:
        return Instruction("STS", d=d, k=next_word)
    if low == 0x920F:
        return Instruction("PUSH", d=d)
    if low == 0x900F:
        return Instruction("POP", d=d)
    if word & 0xF000 == 0xC000:
        return Instruction("RJMP", k=_signed(word & 0x0FFF, 12))
    if word & 0xFC07 == 0xF401:
        return Instruction("BRNE", k=_signed((word >> 3) & 0x7F, 7))
    io_addr = ((word >> 5) & 0x30) | (word & 0x0F)
    if word & 0xF800 == 0xB800:
        return Instruction("OUT", d=d, k=io_addr)
    if word & 0xF800 == 0xB000:
        return Instruction("IN", d=d, k=io_addr)
    return None


@functools.lru_cache(maxsize=8192)
def _decode_cached(words):
    return decode(*words) or NOP


@dataclass(frozen=True)
class Program:
    instructions: tuple
    flash: tuple
    labels: tuple = ()
    origin: int = 0
    source: str = field(default="", compare=False)

    def __len__(self):
        return len(self.instructions)

    @property
    def trigger_lines(self):
        return tuple(i.line for i in self.instructions if i.is_trigger)

    @property
    def static_ticks(self):
        """Tick count of a straight-line run through every instruction once."""
        return TICKS_PER_INSTRUCTION * len(self.instructions)


_LABEL_RE = re.compile(r"^([A-Za-z_.][\w.]*):")
_REG_RE = re.compile(r"^[rR](\d{1,2})$")


def _reg(token, line_no):
    m = _REG_RE.match(token)
    if not m or int(m.group(1)) > 31:
        raise OperandRangeError(line_no, f"expected a register r0..r31, got {token!r}")
    return int(m.group(1))


def _number(token, line_no, lo, hi, what):
    try:
        value = int(token, 0)
    except ValueError:
        raise OperandRangeError(line_no, f"bad {what} {token!r}") from None
    if not lo <= value <= hi:
        raise OperandRangeError(line_no, f"{what} {value} outside [{lo}, {hi}]")
    return value


_OPERANDS = {
    "NOP": 0, "LDI": 2, "MOV": 2, "ADD": 2, "SUB": 2, "AND": 2, "OR": 2, "EOR": 2,
    "LDS": 2, "STS": 2, "PUSH": 1, "POP": 1, "RJMP": 1, "BRNE": 1, "OUT": 2, "IN": 2,
}


def assemble(source):
    """Assemble the supported AVR subset.

    One instruction per line, ``;`` starts a comment, ``name:`` defines a
    label. Branch operands may be labels or signed word offsets.
    """
    parsed = []
    labels = {}
    addr = 0
    for line_no, raw in enumerate(source.splitlines(), start=1):
        text = raw.split(";", 1)[0].strip()
        while True:
            m = _LABEL_RE.match(text)
            if not m:
                break
            if m.group(1) in labels:
                raise UnknownLabel(line_no, f"label {m.group(1)!r} defined twice")
            labels[m.group(1)] = addr
            text = text[m.end():].strip()
        if not text:
            continue
        parts = text.split(None, 1)
        mnemonic = parts[0].upper()
        if mnemonic not in _OPERANDS:
            raise UnknownMnemonic(line_no, f"unknown mnemonic {parts[0]!r}")
        operands = [o.strip() for o in parts[1].split(",")] if len(parts) > 1 else []
        if len(operands) != _OPERANDS[mnemonic]:
            raise OperandRangeError(line_no, f"{mnemonic} takes {_OPERANDS[mnemonic]} operand(s)")
        parsed.append((line_no, addr, mnemonic, operands))
        addr += 2 if mnemonic in ("LDS", "STS") else 1

    instructions = []
    for line_no, addr, op, ops in parsed:
        if op == "NOP":
            ins = Instruction(op, line=line_no)
        elif op == "LDI":
            d = _reg(ops[0], line_no)
            if d < 16:
                raise OperandRangeError(line_no, "LDI needs a register r16..r31")
            ins = Instruction(op, d=d, k=_number(ops[1], line_no, 0, 255, "immediate"), line=line_no)
        elif op in _TWO_REG:
            ins = Instruction(op, d=_reg(ops[0], line_no), r=_reg(ops[1], line_no), line=line_no)
        elif op == "LDS":
            ins = Instruction(op, d=_reg(ops[0], line_no),
                              k=_number(ops[1], line_no, 0, DATA_MEM_SIZE - 1, "address"), line=line_no)
        elif op == "STS":
            ins = Instruction(op, d=_reg(ops[1], line_no),
                              k=_number(ops[0], line_no, 0, DATA_MEM_SIZE - 1, "address"), line=line_no)
        elif op in ("PUSH", "POP"):
            ins = Instruction(op, d=_reg(ops[0], line_no), line=line_no)
        elif op in ("RJMP", "BRNE"):
            lo, hi = (-2048, 2047) if op == "RJMP" else (-64, 63)
            target = ops[0]
            if target in labels:
                offset = labels[target] - (addr + 1)
                if not lo <= offset <= hi:
                    raise OperandRangeError(line_no, f"branch to {target!r} out of range")
            elif re.match(r"^[+-]?(0[xXbB])?[0-9a-fA-F]+$", target):
                offset = _number(target, line_no, lo, hi, "branch offset")
            else:
                raise UnknownLabel(line_no, f"undefined label {target!r}")
            ins = Instruction(op, k=offset, line=line_no)
        elif op == "OUT":
            ins = Instruction(op, k=_number(ops[0], line_no, 0, 63, "I/O address"),
                              d=_reg(ops[1], line_no), line=line_no)
        else:  # IN
            ins = Instruction(op, d=_reg(ops[0], line_no),
                              k=_number(ops[1], line_no, 0, 63, "I/O address"), line=line_no)
        instructions.append(ins)

    flash = tuple(w for ins in instructions for w in encode(ins))
    return Program(tuple(instructions), flash, tuple(sorted(labels.items())), 0, source)


@dataclass
class CoreState:
    pc: int = 0
    regs: bytearray = field(default_factory=lambda: bytearray(32))
    sreg: int = 0
    sp: int = SP_INIT
    data_mem: bytearray = field(default_factory=lambda: bytearray(DATA_MEM_SIZE))
    io: bytearray = field(default_factory=lambda: bytearray(64))
    cycle: int = 0
    halted: bool = False
    trigger_tick: int = None
    input_port: int = 0
    # pipeline latches
    ir: tuple = (0, 0)
    instr: Instruction = NOP
    next_pc: int = 0
    pending: tuple = ()

    @property
    def phase(self):
        return Phase(self.cycle % TICKS_PER_INSTRUCTION)

    def copy(self):
        return CoreState(self.pc, bytearray(self.regs), self.sreg, self.sp, bytearray(self.data_mem),
                         bytearray(self.io), self.cycle, self.halted, self.trigger_tick,
                         self.input_port, self.ir, self.instr, self.next_pc, tuple(self.pending))


@dataclass(frozen=True)
class BusInjection:
    """Force-low window: ``start_tick`` is measured from the trigger-pin write.

    ``gate`` optionally enables individual ticks of the window (used when the
    enable signal has itself travelled over a lossy optical path).
    """

    start_tick: int
    duration_ticks: int = 1
    mask: int = 0xFF
    probability: float = 1.0
    seed: int = 0
    gate: tuple = None

    def __post_init__(self):
        check_int(self.start_tick, "start_tick")
        check_int(self.duration_ticks, "duration_ticks", min_value=1)
        check_int(self.mask, "mask", min_value=0, max_value=0xFF)
        check_probability(self.probability)
        if self.gate is not None and len(self.gate) != self.duration_ticks:
            raise ValueError("gate must have one entry per tick of the window")

    @property
    def is_null(self):
        return (self.mask == 0 or self.probability == 0
                or (self.gate is not None and not any(self.gate)))


class _Injector:
    __slots__ = ("lo", "hi", "mask", "p", "rng", "phases", "ticks", "gate", "log")

    def __init__(self, injection, origin, phases, ticks, log):
        self.lo = origin + injection.start_tick
        self.hi = self.lo + injection.duration_ticks
        self.mask = injection.mask
        self.p = injection.probability
        self.rng = random.Random(injection.seed) if 0 < self.p < 1 else None
        self.phases = frozenset(Phase(p) for p in phases)
        self.ticks = ticks
        self.gate = injection.gate
        self.log = log

    def mask_at(self, tick):
        if not self.lo <= tick < self.hi:
            return 0
        if (tick & 3) not in self.phases:
            return 0
        if self.ticks is not None and tick not in self.ticks:
            return 0
        if self.gate is not None and not self.gate[tick - self.lo]:
            return 0
        if self.rng is not None:
            return self.mask if self.rng.random() < self.p else 0
        return self.mask if self.p > 0 else 0


def _io_read(state, addr):
    if addr == PINB:
        return state.input_port & 0xFF
    if addr == SREG:
        return state.sreg
    if addr == SPL:
        return state.sp & 0xFF
    if addr == SPH:
        return state.sp >> 8
    return state.io[addr]


def _io_write(state, addr, value, tick):
    if addr == SREG:
        state.sreg = value
    elif addr == SPL:
        state.sp = ((state.sp & 0xFF00) | value) % DATA_MEM_SIZE
    elif addr == SPH:
        state.sp = ((value << 8) | (state.sp & 0xFF)) % DATA_MEM_SIZE
    else:
        state.io[addr] = value
    if addr == TRIGGER_PORT and state.trigger_tick is None:
        state.trigger_tick = tick


def _alu(op, a, b, sreg):
    if op == "ADD":
        res = (a + b) & 0xFF
        carry = a + b > 0xFF
        half = (a & 0xF) + (b & 0xF) > 0xF
        overflow = (~(a ^ b) & (a ^ res) & 0x80) != 0
    elif op == "SUB":
        res = (a - b) & 0xFF
        carry = b > a
        half = (b & 0xF) > (a & 0xF)
        overflow = ((a ^ b) & (a ^ res) & 0x80) != 0
    else:
        res = a & b if op == "AND" else a | b if op == "OR" else a ^ b
        carry = bool(sreg & C_FLAG)
        half = bool(sreg & H_FLAG)
        overflow = False
    neg = bool(res & 0x80)
    flags = sreg & 0xC0
    flags |= C_FLAG if carry else 0
    flags |= Z_FLAG if res == 0 else 0
    flags |= N_FLAG if neg else 0
    flags |= V_FLAG if overflow else 0
    flags |= S_FLAG if neg != overflow else 0
    flags |= H_FLAG if half else 0
    return res, flags


def _tick(state, program, injector):
    """Advance ``state`` by one tick in place; a no-op once halted."""
    if state.halted:
        return
    t = state.cycle
    phase = t & 3
    mask = injector.mask_at(t) if injector is not None else 0
    if mask:
        log = injector.log

        def bus(kind, value):
            out = value & ~mask & 0xFF
            if log is not None:
                log.append((t, kind, value, out, mask))
            return out
    else:
        bus = None

    if phase == 0:  # FETCH
        flash = program.flash
        pc = state.pc
        if not 0 <= pc < len(flash):
            state.halted = True
            return
        hi_word = flash[pc]
        lo_word = flash[pc + 1] if pc + 1 < len(flash) else 0
        if bus:
            hi_word = (bus("fetch", hi_word >> 8) << 8) | bus("fetch", hi_word & 0xFF)
            lo_word = (bus("fetch", lo_word >> 8) << 8) | bus("fetch", lo_word & 0xFF)
        state.ir = (hi_word, lo_word)
    elif phase == 1:  # DECODE
        ins = _decode_cached(state.ir)
        state.instr = ins
        state.next_pc = state.pc + ins.size
    elif phase == 2:  # EXECUTE
        ins = state.instr
        op = ins.op
        regs = state.regs
        if op == "LDI":
            state.pending = [("reg", ins.d, ins.k)]
        elif op == "MOV":
            state.pending = [("reg", ins.d, regs[ins.r])]
        elif op in ("ADD", "SUB", "AND", "OR", "EOR"):
            res, flags = _alu(op, regs[ins.d], regs[ins.r], state.sreg)
            state.pending = [("reg", ins.d, res), ("sreg", 0, flags)]
        elif op == "LDS":
            v = state.data_mem[ins.k % DATA_MEM_SIZE]
            state.pending = [("reg", ins.d, bus("mem_read", v) if bus else v)]
        elif op == "STS":
            state.pending = [("mem", ins.k % DATA_MEM_SIZE, regs[ins.d])]
        elif op == "PUSH":
            state.pending = [("push", 0, regs[ins.d])]
        elif op == "POP":
            state.sp = (state.sp + 1) % DATA_MEM_SIZE
            v = state.data_mem[state.sp]
            state.pending = [("reg", ins.d, bus("stack_read", v) if bus else v)]
        elif op == "IN":
            v = _io_read(state, ins.k)
            state.pending = [("reg", ins.d, bus("io_read", v) if bus else v)]
        elif op == "OUT":
            state.pending = [("io", ins.k, regs[ins.d])]
        else:
            state.pending = []
            if op == "RJMP" or (op == "BRNE" and not state.sreg & Z_FLAG):
                target = state.pc + 1 + ins.k
                low = target & 0xFF
                state.next_pc = (target & ~0xFF) | (bus("pc", low) if bus else low)
    else:  # WRITEBACK
        for kind, where, value in state.pending:
            if bus:
                value = bus(_WRITE_KIND[kind], value)
            if kind == "reg":
                state.regs[where] = value
            elif kind == "sreg":
                state.sreg = value
            elif kind == "mem":
                state.data_mem[where] = value
            elif kind == "push":
                state.data_mem[state.sp] = value
                state.sp = (state.sp - 1) % DATA_MEM_SIZE
            else:
                _io_write(state, where, value, t)
        state.pending = ()
        state.pc = state.next_pc
    state.cycle = t + 1


_WRITE_KIND = {"reg": "reg", "sreg": "sreg", "mem": "mem_write", "push": "stack_write", "io": "io_write"}


def step(state, program, injection=None, susceptible_phases=DEFAULT_SUSCEPTIBLE, *,
         trigger_tick=0, susceptible_ticks=None, transfer_log=None):
    """Return a copy of ``state`` advanced by one tick.

    The injection window is placed relative to ``trigger_tick``. Coins are
    drawn from a fresh generator seeded by the injection, so single-stepping
    a probabilistic window is only reproducible tick by tick, not equal to a
    full :func:`run_with_injection`.
    """
    new = state.copy()
    injector = None
    if injection is not None:
        injector = _Injector(injection, trigger_tick, susceptible_phases, susceptible_ticks, transfer_log)
    _tick(new, program, injector)
    return new


@dataclass(frozen=True)
class Snapshot:
    tick: int
    pc: int
    sp: int
    sreg: int
    regs: bytes
    portb: int = 0
    memory: tuple = ()  # ((start_address, bytes), ...)

    def fields(self):
        out = {"pc": self.pc, "sp": self.sp, "sreg": self.sreg, "portb": self.portb}
        for i, v in enumerate(self.regs):
            out[f"r{i}"] = v
        for start, block in self.memory:
            for i, v in enumerate(block):
                out[f"mem[0x{start + i:04x}]"] = v
        return out


DEFAULT_MEM_WINDOWS = ((0x0100, 0x0120), (DATA_MEM_SIZE - 16, DATA_MEM_SIZE))


def take_snapshot(state, tick, mem_windows=DEFAULT_MEM_WINDOWS):
    mem = state.data_mem
    return Snapshot(tick, state.pc, state.sp, state.sreg, bytes(state.regs), state.io[PORTB],
                    tuple((lo, bytes(mem[lo:hi])) for lo, hi in mem_windows))


@dataclass(frozen=True)
class RunTrace:
    snapshots: tuple
    trigger_tick: int
    end_tick: int
    error: str = None

    def __len__(self):
        return len(self.snapshots)

    def __iter__(self):
        return iter(self.snapshots)

    def __getitem__(self, i):
        return self.snapshots[i]


@functools.lru_cache(maxsize=64)
def golden_trigger_tick(program, input_port=0, tick_limit=DEFAULT_TICK_LIMIT):
    """Tick of the first trigger-pin write in an uninjected run (0 if the program never triggers)."""
    trace = run_with_injection(program, None, checkpoints=(), input_port=input_port,
                               tick_limit=tick_limit)
    return 0 if trace.trigger_tick is None else trace.trigger_tick


def run_with_injection(program, injection=None, susceptible_phases=DEFAULT_SUSCEPTIBLE,
                       checkpoints=None, *, trigger_tick=None, susceptible_ticks=None,
                       tick_limit=DEFAULT_TICK_LIMIT, mem_windows=DEFAULT_MEM_WINDOWS,
                       input_port=0, transfer_log=None, state=None):
    """Run ``program`` to completion, snapshotting after each checkpoint tick.

    ``checkpoints=None`` snapshots at the end of every instruction. The
    injection window is placed relative to ``trigger_tick``, which defaults to
    the trigger tick of the uninjected run. Raises :class:`TickLimitExceeded`
    if the core has not halted after ``tick_limit`` ticks.
    """
    state = state.copy() if state is not None else CoreState(input_port=input_port)
    injector = None
    if injection is not None and not injection.is_null and susceptible_phases:
        if trigger_tick is None:
            trigger_tick = golden_trigger_tick(program, input_port)
        ticks = frozenset(susceptible_ticks) if susceptible_ticks is not None else None
        injector = _Injector(injection, trigger_tick, susceptible_phases, ticks, transfer_log)

    snaps = []
    every = checkpoints is None
    marks = frozenset(checkpoints) if not every else frozenset()
    limit = tick_limit
    tick = _tick
    while not state.halted:
        t = state.cycle
        if t >= limit:
            raise TickLimitExceeded(f"core still running after {tick_limit} ticks")
        tick(state, program, injector)
        if state.halted:
            break
        if (t & 3 == 3) if every else (t in marks):
            snaps.append(take_snapshot(state, t, mem_windows))
    return RunTrace(tuple(snaps), state.trigger_tick, state.cycle)


SNAPSHOT_CSV_HEADER = ["tick", "pc", "sp", "sreg"] + [f"r{i}" for i in range(32)]


def snapshots_csv_rows(snapshots):
    for s in snapshots:
        yield [str(s.tick), f"0x{s.pc:04x}", f"0x{s.sp:04x}", f"0x{s.sreg:02x}"] + [
            f"0x{v:02x}" for v in s.regs]
