"""Delay-sweep fault-injection harness.

For every delay offset (in ticks after the trigger-pin write) the target is
run ``reps`` times with a force-low window at that offset, and each run's
snapshots are diffed against the uninjected golden run. A per-field
frequency model fitted on golden runs provides a secondary novelty score.
"""

import csv
import enum
import functools
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_int, check_positive, check_probability
from .channel import ELECTRO_OPTIC, ChannelParams, apply_channel, modulate_ook
from .core import (DEFAULT_MEM_WINDOWS, Phase, BusInjection, run_with_injection,
                   golden_trigger_tick)
from .devices import bundled_devices, find_device
from .exceptions import EmptyBaseline, LumenError, TickMismatch
from .link import LedReceiver
from .gpio import Logic, Terminal


class InjectionPath(enum.Enum):
    DIRECT_LOGIC = "direct"
    OPTICAL = "optical"


ALL_PHASES = frozenset(Phase)


@dataclass(frozen=True)
class VulnerabilityProfile:
    """Where the simulated silicon lets a forced-low level reach the data bus.

    ``ticks`` (relative to the trigger) restricts susceptibility to planted
    ticks; ``None`` means every tick in a susceptible phase.
    """

    phases: frozenset = frozenset({Phase.EXECUTE, Phase.WRITEBACK})
    ticks: frozenset = None
    name: str = "default"

    @classmethod
    def none(cls):
        return cls(frozenset(), None, "none")

    @classmethod
    def planted(cls, *ticks):
        return cls(ALL_PHASES, frozenset(ticks), "planted:" + ",".join(str(t) for t in ticks))

    @classmethod
    def parse(cls, text):
        text = text.strip()
        if text == "none":
            return cls.none()
        if text == "default":
            return cls()
        if text.startswith("planted:"):
            try:
                ticks = [int(t) for t in text[len("planted:"):].split(",")]
            except ValueError:
                raise ValueError(f"bad planted profile {text!r}") from None
            return cls.planted(*ticks)
        raise ValueError(f"unknown profile {text!r} (expected none, default or planted:<tick>)")

    @property
    def is_null(self):
        return not self.phases or (self.ticks is not None and not self.ticks)


@dataclass(frozen=True)
class OpticalPath:
    """Settings for routing the injection enable through light and an LED."""

    device: object = None
    excitation: str = "laser640"
    terminal: str = "anode"
    modulator: object = ELECTRO_OPTIC
    peak_w_m2: float = 0.01
    coupling: float = 1.0
    ambient_w_m2: float = 0.0
    noise_sigma_w_m2: float = 0.0
    samples_per_tick: int = 2

    def resolved_device(self):
        if self.device is None:
            return find_device(bundled_devices(), "5 mm blue LED")
        return self.device


@dataclass(frozen=True)
class SweepConfig:
    delay_min: int = 0
    delay_max: int = 0
    step: int = 1
    reps_per_offset: int = 1
    mask: int = 0xFF
    duration_ticks: int = 1
    probability: float = 1.0
    seed: int = 0
    injection_path: InjectionPath = InjectionPath.DIRECT_LOGIC
    tick_seconds: float = 1e-6
    optical: OpticalPath = field(default_factory=OpticalPath)
    mem_windows: tuple = DEFAULT_MEM_WINDOWS

    def __post_init__(self):
        check_int(self.delay_min, "delay_min")
        check_int(self.delay_max, "delay_max")
        if self.delay_min > self.delay_max:
            raise ValueError("delay_min must not exceed delay_max")
        check_int(self.step, "step", min_value=1)
        check_int(self.reps_per_offset, "reps_per_offset", min_value=1)
        check_int(self.mask, "mask", min_value=0, max_value=0xFF)
        check_int(self.duration_ticks, "duration_ticks", min_value=1)
        check_probability(self.probability)
        check_int(self.seed, "seed", min_value=0)
        check_positive(self.tick_seconds, "tick_seconds")
        object.__setattr__(self, "injection_path", InjectionPath(self.injection_path))

    @property
    def offsets(self):
        return range(self.delay_min, self.delay_max + 1, self.step)


@dataclass
class SweepResult:
    offset_ticks: int
    reps: int
    anomaly_count: int = 0
    fields: tuple = ()
    first_divergence_tick: int = None
    novelty_score: float = 0.0
    errors: int = 0


@functools.lru_cache(maxsize=32)
def _golden(program, checkpoints, mem_windows, input_port):
    return run_with_injection(program, None, checkpoints=checkpoints, mem_windows=mem_windows,
                              input_port=input_port)


def golden_trace(program, checkpoints=None, *, mem_windows=DEFAULT_MEM_WINDOWS, input_port=0):
    """Uninjected reference run, cached per program."""
    if checkpoints is not None:
        checkpoints = tuple(sorted(set(checkpoints)))
    return _golden(program, checkpoints, tuple(mem_windows), input_port)


def diff_snapshot(observed, golden):
    """Set of ``(field, golden_value, observed_value)`` for every field that differs."""
    if observed.tick != golden.tick:
        raise TickMismatch(f"observed tick {observed.tick} != golden tick {golden.tick}")
    if observed == golden:
        return set()
    g = golden.fields()
    return {(name, g.get(name), value) for name, value in observed.fields().items()
            if g.get(name) != value}


def diff_trace(observed, golden):
    """Diverging field names and the first divergence tick between two runs."""
    names = set()
    first = None
    obs, gold = observed.snapshots, golden.snapshots
    if obs == gold and observed.end_tick == golden.end_tick:
        return names, first
    for o, g in zip(obs, gold):
        if o is g or o == g:
            continue
        names.update(f for f, _, _ in diff_snapshot(o, g))
        if first is None:
            first = o.tick
    if len(obs) != len(gold) or observed.end_tick != golden.end_tick:
        names.add("halt")
        divergence = min(observed.end_tick, golden.end_tick)
        if first is None or divergence < first:
            first = divergence
    return names, first


def novelty_score(observed, baseline):
    """Sum over fields of ``-log(freq)``, where freq is the share of baseline snapshots
    holding the observed value, floored at ``1/(N+1)``."""
    baseline = list(baseline)
    if not baseline:
        raise EmptyBaseline("novelty_score needs at least one baseline snapshot")
    n = len(baseline)
    floor = 1.0 / (n + 1)
    counts = {}
    for snap in baseline:
        for name, value in snap.fields().items():
            counts.setdefault(name, Counter())[value] += 1
    score = 0.0
    for name, value in observed.fields().items():
        freq = counts.get(name, Counter())[value] / n
        score -= math.log(max(freq, floor))
    return score + 0.0


class GoldenTraceDetector(BaseEstimator):
    """Novelty detector fitted on golden runs, one frequency model per checkpoint.

    ``predict`` follows the scikit-learn novelty convention: +1 normal, -1 novel.
    """

    def __init__(self, threshold=0.0):
        self.threshold = threshold

    def fit(self, X, y=None):
        traces = [t.snapshots if hasattr(t, "snapshots") else tuple(t) for t in X]
        if not traces:
            raise EmptyBaseline("fit needs at least one golden run")
        self.n_baseline_ = len(traces)
        # golden runs are usually identical, so keep each distinct run once with its multiplicity
        self.baseline_ = Counter(traces)
        self.lengths_ = Counter(len(t) for t in traces)
        self._counts = {}
        return self

    def _checkpoint_counts(self, i):
        if i not in self._counts:
            counts = {}
            for trace, weight in self.baseline_.items():
                if i < len(trace):
                    for name, value in trace[i].fields().items():
                        counts.setdefault(name, Counter())[value] += weight
            self._counts[i] = counts
        return self._counts[i]

    def _score_one(self, i, snap):
        n = self.n_baseline_
        floor = 1.0 / (n + 1)
        if all(i < len(t) and t[i] == snap for t in self.baseline_):
            return 0.0
        counts = self._checkpoint_counts(i)
        score = 0.0
        for name, value in snap.fields().items():
            freq = counts.get(name, Counter())[value] / n
            score -= math.log(max(freq, floor))
        return score + 0.0

    def score_samples(self, X):
        """Per-checkpoint novelty for one run (higher is more novel)."""
        snaps = X.snapshots if hasattr(X, "snapshots") else tuple(X)
        return np.array([self._score_one(i, s) for i, s in enumerate(snaps)])

    def score_run(self, X):
        """Max per-checkpoint novelty, plus the halt term when the run length was never seen."""
        snaps = X.snapshots if hasattr(X, "snapshots") else tuple(X)
        scores = self.score_samples(snaps)
        best = float(scores.max()) if scores.size else 0.0
        seen = self.lengths_[len(snaps)] / self.n_baseline_
        halt = -math.log(max(seen, 1.0 / (self.n_baseline_ + 1)))
        return best + halt + 0.0

    def predict(self, X):
        return np.array([1 if self.score_run(run) <= self.threshold else -1 for run in X])


def _run_seed(master, offset_index, rep):
    seq = np.random.SeedSequence(master, spawn_key=(offset_index, rep))
    return int(seq.generate_state(1, np.uint64)[0])


def optical_gate(config, duration, seed):
    """Send the enable pulse over the optical path; returns the per-tick gate it produced.

    A tick counts as enabled only when every sample of it reads LOW (lit) at the sense pin.
    """
    opt = config.optical
    bits = np.concatenate([[0], np.ones(duration, dtype=np.uint8), [0]]).astype(np.uint8)
    trace = modulate_ook(bits, 1.0 / config.tick_seconds, opt.peak_w_m2, opt.modulator,
                         samples_per_bit=opt.samples_per_tick)
    params = ChannelParams(opt.coupling, opt.ambient_w_m2, opt.noise_sigma_w_m2, seed)
    received = apply_channel(trace, params)
    device = opt.resolved_device()
    receiver = LedReceiver(device, Terminal(opt.terminal), opt.excitation)
    logic = receiver.transform(received).reshape(len(bits), opt.samples_per_tick)
    lit = (logic == Logic.LOW).all(axis=1)
    return tuple(bool(x) for x in lit[1:-1])


def run_sweep(config, program, profile=None, *, input_port=0, tick_limit=None):
    """Sweep the injection window over ``config.offsets`` and report anomalies per offset."""
    profile = profile or VulnerabilityProfile()
    golden = golden_trace(program, mem_windows=config.mem_windows, input_port=input_port)
    checkpoints = tuple(s.tick for s in golden.snapshots)
    trigger = golden_trigger_tick(program, input_port)
    if tick_limit is None:
        tick_limit = 10 * golden.end_tick + 1000
    detector = GoldenTraceDetector().fit([golden] * config.reps_per_offset)
    susceptible_ticks = None
    if profile.ticks is not None:
        susceptible_ticks = frozenset(trigger + t for t in profile.ticks)

    if config.injection_path is InjectionPath.OPTICAL:
        # fail fast on a modulator that cannot key at the tick rate
        config.optical.modulator.check_rate(1.0 / config.tick_seconds)

    results = []
    for oi, offset in enumerate(config.offsets):
        res = SweepResult(offset, config.reps_per_offset)
        names = set()
        for rep in range(config.reps_per_offset):
            seed = _run_seed(config.seed, oi, rep)
            gate = None
            if config.injection_path is InjectionPath.OPTICAL:
                gate = optical_gate(config, config.duration_ticks, seed)
            injection = BusInjection(offset, config.duration_ticks, config.mask,
                                     config.probability, seed, gate)
            try:
                observed = run_with_injection(
                    program, injection, profile.phases, checkpoints, trigger_tick=trigger,
                    susceptible_ticks=susceptible_ticks, tick_limit=tick_limit,
                    mem_windows=config.mem_windows, input_port=input_port)
            except LumenError as exc:
                res.errors += 1
                res.anomaly_count += 1
                names.add(f"error:{type(exc).__name__}")
                continue
            diverging, first = diff_trace(observed, golden)
            if diverging:
                res.anomaly_count += 1
                names |= diverging
                if first is not None and (res.first_divergence_tick is None
                                          or first < res.first_divergence_tick):
                    res.first_divergence_tick = first
                res.novelty_score = max(res.novelty_score, detector.score_run(observed))
        res.fields = tuple(sorted(names, key=_field_order))
        results.append(res)
    return results


def _field_order(name):
    if name.startswith("r") and name[1:].isdigit():
        return (1, int(name[1:]), name)
    if name.startswith("mem["):
        return (2, int(name[4:-1], 16), name)
    return (0 if name in ("pc", "sp", "sreg", "portb") else 3, 0, name)


def expected_offsets(profile, config):
    """Offsets whose window overlaps a planted tick: the ground truth for a planted profile."""
    if profile.ticks is None:
        return None
    out = set()
    for offset in config.offsets:
        if any(offset <= t < offset + config.duration_ticks for t in profile.ticks):
            out.add(offset)
    return out


def summarize(results, config, profile):
    detected = {r.offset_ticks for r in results if r.anomaly_count}
    doc = {
        "profile": profile.name,
        "injection_path": config.injection_path.value,
        "offsets": len(results),
        "reps_per_offset": config.reps_per_offset,
        "runs": len(results) * config.reps_per_offset,
        "anomalies": sum(r.anomaly_count for r in results),
        "errors": sum(r.errors for r in results),
        "detected_offsets": sorted(detected),
        "tick_seconds": config.tick_seconds,
        "seed": config.seed,
    }
    truth = expected_offsets(profile, config)
    if truth is not None:
        hits = len(detected & truth)
        doc["planted_offsets"] = sorted(truth)
        doc["recall"] = hits / len(truth) if truth else 1.0
        doc["precision"] = hits / len(detected) if detected else 1.0
    return doc


def results_csv(results):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["offset_ticks", "reps", "anomalies", "first_divergence_tick", "fields",
                     "max_novelty"])
    for r in results:
        writer.writerow([r.offset_ticks, r.reps, r.anomaly_count,
                         "" if r.first_divergence_tick is None else r.first_divergence_tick,
                         ";".join(r.fields), f"{r.novelty_score:.6f}"])
    return buf.getvalue()


def summary_json(doc):
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
