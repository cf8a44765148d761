import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lumen.core import (DEFAULT_SUSCEPTIBLE, MNEMONICS, BusInjection, CoreState, Instruction, Phase,
                        _decode_cached, assemble, decode, encode, golden_trigger_tick,
                        run_with_injection, snapshots_csv_rows, step)
from lumen.exceptions import OperandRangeError, TickLimitExceeded, UnknownLabel, UnknownMnemonic
from lumen.sweep import diff_snapshot

from oracles import force_low_replay, random_program


def test_ldi_assembles():
    prog = assemble("LDI r16, 0x2A")
    assert len(prog) == 1
    ins = prog.instructions[0]
    assert (ins.op, ins.d, ins.k) == ("LDI", 16, 42)
    assert prog.flash == (0xE20A,)


@pytest.mark.parametrize("src, word", [
    ("ADD r1, r2", 0x0C12), ("MOV r17, r16", 0x2F10), ("EOR r18, r16", 0x2720),
    ("PUSH r19", 0x933F), ("POP r20", 0x914F), ("OUT 0x05, r16", 0xB905), ("IN r21, 0x03", 0xB153),
    ("NOP", 0x0000),
])
def test_real_encodings(src, word):
    assert assemble(src).flash[0] == word


def test_unknown_label():
    with pytest.raises(UnknownLabel):
        assemble("BRNE loop")


def test_unknown_mnemonic():
    with pytest.raises(UnknownMnemonic) as err:
        assemble("NOP\nJMP 0")
    assert err.value.line_no == 2


@pytest.mark.parametrize("src", ["LDI r15, 1", "LDI r16, 256", "MOV r32, r1", "STS 0x800, r1", "BRNE 64"])
def test_operand_range(src):
    with pytest.raises(OperandRangeError):
        assemble(src)


def test_opcode_coverage(opcode_coverage):
    assert len(opcode_coverage) == 16
    assert sorted(i.op for i in opcode_coverage.instructions) == sorted(MNEMONICS)
    trace = run_with_injection(opcode_coverage)
    assert trace.end_tick == 64 == opcode_coverage.static_ticks
    assert len(trace) == 16


@given(st.integers(0, 0xFFFF), st.integers(0, 0xFFFF))
def test_decode_encode_consistent(word, nxt):
    ins = decode(word, nxt)
    if ins is not None:
        words = encode(ins)
        assert words[0] == word or ins.op == "NOP"
        if len(words) == 2:
            assert words[1] == nxt


def ldi_state(value):
    prog = assemble(f"LDI r16, {value}")
    state = CoreState()
    for _ in range(3):
        state = step(state, prog, None)
    return prog, state


def test_force_low_writeback():
    prog, state = ldi_state(0xFF)
    out = step(state, prog, BusInjection(3, 1, 0xFF, 1.0), {Phase.WRITEBACK})
    assert out.regs[16] == 0x00


def test_probability_zero_is_a_no_op():
    prog, state = ldi_state(0xFF)
    out = step(state, prog, BusInjection(3, 1, 0xFF, 0.0), {Phase.WRITEBACK})
    assert out.regs[16] == 0xFF


@pytest.mark.parametrize("r2, golden_r1, injected_r1", [(1, 4, 4), (2, 5, 4)])
def test_add_masked_against_uninjected_run(r2, golden_r1, injected_r1):
    prog = assemble(f"LDI r16, 3\nMOV r1, r16\nLDI r16, {r2}\nMOV r2, r16\nADD r1, r2")
    wb = 4 * 4 + 3
    golden = run_with_injection(prog)
    injected = run_with_injection(prog, BusInjection(wb, 1, 0x01, 1.0), {Phase.WRITEBACK})
    assert golden[-1].regs[1] == golden_r1
    assert injected[-1].regs[1] == injected_r1 == golden_r1 & ~0x01


def test_runs_are_deterministic(sweep_target):
    assert run_with_injection(sweep_target) == run_with_injection(sweep_target)
    inj = BusInjection(100, 40, 0x5A, 0.3, seed=9)
    assert run_with_injection(sweep_target, inj) == run_with_injection(sweep_target, inj)


def test_window_after_end_matches_golden(sweep_target):
    golden = run_with_injection(sweep_target)
    late = run_with_injection(sweep_target, BusInjection(golden.end_tick + 10, 50, 0xFF, 1.0))
    assert late == golden


def test_sts_window_touches_only_that_byte(opcode_coverage):
    trigger = golden_trigger_tick(opcode_coverage)
    assert trigger == 47
    sts_wb = 7 * 4 + 3
    golden = run_with_injection(opcode_coverage)
    observed = run_with_injection(opcode_coverage, BusInjection(sts_wb - trigger, 1, 0xFF, 1.0),
                                  {Phase.WRITEBACK})
    at = [i for i, s in enumerate(golden) if s.tick == sts_wb][0]
    assert diff_snapshot(observed[at], golden[at]) == {("mem[0x0100]", 42, 0)}
    assert all(o == g for o, g in zip(observed[:at], golden[:at]))


@settings(max_examples=60, deadline=None)
@given(st.integers(-50, 1500), st.integers(1, 200), st.integers(0, 255), st.floats(0, 1), st.integers(0, 2**32),
       st.sampled_from(["mask0", "p0", "late", "nophase", "closed_gate"]))
def test_null_injection_is_bit_exact(sweep_target, start, duration, mask, p, seed, kind):
    golden = run_with_injection(sweep_target)
    if kind == "mask0":
        inj, phases = BusInjection(start, duration, 0, p, seed), DEFAULT_SUSCEPTIBLE
    elif kind == "p0":
        inj, phases = BusInjection(start, duration, mask, 0.0, seed), DEFAULT_SUSCEPTIBLE
    elif kind == "late":
        inj, phases = BusInjection(golden.end_tick, duration, mask, p, seed), DEFAULT_SUSCEPTIBLE
    elif kind == "nophase":
        inj, phases = BusInjection(start, duration, mask, p, seed), frozenset()
    else:
        inj, phases = BusInjection(start, duration, mask, p, seed, (False,) * duration), DEFAULT_SUSCEPTIBLE
    assert run_with_injection(sweep_target, inj, phases) == golden


def test_force_low_law_replay(sweep_target, opcode_coverage):
    rng = np.random.default_rng(3)
    programs = [sweep_target, opcode_coverage] + [random_program(rng) for _ in range(5)]
    transfers, _ = force_low_replay(programs, 5_000, seed=3)
    assert transfers >= 5_000


@settings(max_examples=40, deadline=None)
@given(st.integers(-20, 1400), st.integers(1, 300), st.integers(1, 255), st.floats(0.05, 1), st.integers(0, 2**32))
def test_harvard_separation(sweep_target, start, duration, mask, p, seed):
    """With fetch not susceptible, every decoded instruction is the one stored in flash."""
    flash = sweep_target.flash
    log = []
    state = CoreState()
    inj = BusInjection(start, duration, mask, p, seed)
    trigger = golden_trigger_tick(sweep_target)
    while not state.halted and state.cycle < 3000:
        decoding = state.cycle & 3 == Phase.DECODE
        pc = state.pc
        state = step(state, sweep_target, inj, DEFAULT_SUSCEPTIBLE, trigger_tick=trigger, transfer_log=log)
        if decoding:
            stored = (flash[pc], flash[pc + 1] if pc + 1 < len(flash) else 0)
            assert state.instr == _decode_cached(stored)
    assert all(kind != "fetch" for _, kind, *_ in log)
    assert sweep_target.flash is flash


def test_fetch_injection_can_change_instructions():
    prog = assemble("LDI r16, 0xFF\nNOP")
    trace = run_with_injection(prog, BusInjection(0, 1, 0xFF, 1.0), {Phase.FETCH}, trigger_tick=0)
    assert trace[0].regs[16] == 0


def test_tick_limit():
    with pytest.raises(TickLimitExceeded):
        run_with_injection(assemble("loop: RJMP loop"), tick_limit=1000)


def test_trigger_is_recorded(sweep_target):
    trace = run_with_injection(sweep_target)
    assert trace.trigger_tick == 15
    assert trace[-1].portb == 0


def test_checkpoint_subset(sweep_target):
    full = run_with_injection(sweep_target)
    picked = run_with_injection(sweep_target, checkpoints=[s.tick for s in full[::10]])
    assert picked.snapshots == full.snapshots[::10]


def test_snapshot_csv(opcode_coverage):
    rows = list(snapshots_csv_rows(run_with_injection(opcode_coverage)))
    assert len(rows) == 16
    assert rows[0][:2] == ["3", "0x0001"]


def test_instruction_sizes():
    assert Instruction("LDS").size == 2 and Instruction("ADD").size == 1
    assert assemble("LDS r1, 0x100\nNOP").labels == ()
