"""Count-based covert channel: leak a secret byte through a bound event.

One trial resets the bound counter, lets the transiently executed gadget
compare a candidate byte against the secret, and runs the transmit
instruction only on a match; the counter delta afterwards says whether the
candidate fired.  Iterating all 256 candidates and taking the argmax of the
accumulated scores decodes one secret byte.

The victim here is simulated, so trials are deterministic and elapsed time
comes from a cost model calibrated to measured channel rates.
"""

from __future__ import annotations

import json
from collections.abc import Iterable
from dataclasses import dataclass, replace

from .backend import CounterBackend, SimEventFamily, SLOTS
from .corpus import SIGNAL_HANDLER, TRANSACTIONAL
from .errors import CapabilityError
from .events import EventSelector, format_selector, scan_control, umask_gates
from .seeding import point_fraction

MELTDOWN = "meltdown"
SPECTRE_V1 = "spectre_v1"
SPECTRE_V2 = "spectre_v2"
ATTACK_KINDS = (MELTDOWN, SPECTRE_V1, SPECTRE_V2)

_SUPPRESSION_MODES = (SIGNAL_HANDLER, TRANSACTIONAL)

# Reference channel rates in bytes/s, measured with 10 iterations per
# candidate over the full 256-candidate ring.  Spectre variants pay for
# branch mistraining instead of exception handling, so their rate does not
# depend on the suppression mode.
_REFERENCE_RATES: dict[tuple[str, str], float] = {
    (MELTDOWN, TRANSACTIONAL): 789.86,
    (MELTDOWN, SIGNAL_HANDLER): 497.49,
    (SPECTRE_V2, TRANSACTIONAL): 148.68,
    (SPECTRE_V2, SIGNAL_HANDLER): 148.68,
    (SPECTRE_V1, TRANSACTIONAL): 148.68,
    (SPECTRE_V1, SIGNAL_HANDLER): 148.68,
}
_REFERENCE_TRIALS_PER_BYTE = 256 * 10


def trial_cost_seconds(attack_kind: str, suppression: str) -> float:
    """Modeled cost of one trial for the given gadget flavour."""
    try:
        rate = _REFERENCE_RATES[(attack_kind, suppression)]
    except KeyError:
        raise ValueError(
            f"no rate calibration for attack {attack_kind!r} with {suppression!r}"
        ) from None
    return 1.0 / (rate * _REFERENCE_TRIALS_PER_BYTE)


@dataclass(frozen=True)
class GadgetSpec:
    """Shape of the transmitting gadget and its recovery loop."""

    bound_selector: EventSelector
    transmit_class: str = "memory-load"
    iterations: int = 10
    suppression: str = SIGNAL_HANDLER
    secret_length: int = 16
    attack_kind: str = MELTDOWN
    scaffold_class: str = "alu"

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.secret_length < 1:
            raise ValueError("secret_length must be at least 1")
        if self.suppression not in _SUPPRESSION_MODES:
            raise ValueError(f"unknown suppression mode {self.suppression!r}")
        if self.attack_kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.attack_kind!r}")
        if not self.transmit_class:
            raise ValueError("transmit_class must be non-empty")


@dataclass(frozen=True)
class SimVictim:
    """Holds the secret and the channel's false-fire noise level.

    false_fire_prob is the chance that a non-matching candidate still runs
    the transmit instruction in one iteration.  Draws are indexed by
    (position, candidate, iteration), not by call order, so iteration 7 of
    a candidate fires identically whether the loop runs 10 or 20 rounds.
    """

    secret: bytes
    false_fire_prob: float = 0.0
    noise_seed: int = 0

    def __post_init__(self) -> None:
        if not self.secret:
            raise ValueError("victim secret must be non-empty")
        if not 0.0 <= self.false_fire_prob < 1.0:
            raise ValueError("false_fire_prob must be in [0, 1)")


def _check_runnable(spec: GadgetSpec, backend: CounterBackend) -> None:
    caps = backend.capabilities()
    if not caps.is_simulated:
        raise CapabilityError("gadget simulation requires a simulated backend")
    if spec.suppression == TRANSACTIONAL and not caps.supports_transactional_suppression:
        raise CapabilityError("backend does not support transactional suppression")


def _fires(spec: GadgetSpec, victim: SimVictim, position: int, guess: int, iteration: int) -> bool:
    # spectre_v1 mistraining never reaches the transmit gadget in this model
    if spec.attack_kind == SPECTRE_V1:
        return False
    if guess == victim.secret[position]:
        return True
    if victim.false_fire_prob > 0.0:
        return (
            point_fraction(victim.noise_seed, position, guess, iteration)
            < victim.false_fire_prob
        )
    return False


def run_trial(
    spec: GadgetSpec,
    guess: int,
    position: int,
    backend: CounterBackend,
    victim: SimVictim,
    iteration: int = 0,
) -> int:
    """One gadget round: zero the bound counter, run the transient compare,
    transmit on a match, read the delta."""
    _check_runnable(spec, backend)
    if not 0 <= guess <= 0xFF:
        raise ValueError(f"guess out of byte range: {guess!r}")
    if not 0 <= position < len(victim.secret):
        raise IndexError(f"position {position} outside the {len(victim.secret)}-byte secret")
    slot = SLOTS[0]
    backend.program(slot, scan_control(spec.bound_selector))
    record = backend.record_execution  # type: ignore[attr-defined]
    record(spec.scaffold_class)
    if _fires(spec, victim, position, guess, iteration):
        record(spec.transmit_class)
    return backend.read(slot)


def recover_byte(
    spec: GadgetSpec, position: int, backend: CounterBackend, victim: SimVictim
) -> tuple[int, list[int]]:
    """Decode one secret byte from accumulated trial scores.

    Runs spec.iterations trials for each of the 256 candidates (the same
    loop as run_trial, inlined) and returns the argmax candidate plus all
    scores.  Score ties resolve to the lowest byte value, so an all-zero
    round decodes as 0x00; treat zero top scores as no-confidence.
    """
    _check_runnable(spec, backend)
    if not 0 <= position < len(victim.secret):
        raise IndexError(f"position {position} outside the {len(victim.secret)}-byte secret")
    value = scan_control(spec.bound_selector)
    slot = SLOTS[0]
    program = backend.program
    record = backend.record_execution  # type: ignore[attr-defined]
    read = backend.read
    scaffold = spec.scaffold_class
    transmit = spec.transmit_class
    secret_byte = victim.secret[position]
    prob = victim.false_fire_prob
    seed = victim.noise_seed
    v1 = spec.attack_kind == SPECTRE_V1
    iterations = spec.iterations
    scores = [0] * 256
    for candidate in range(256):
        match = candidate == secret_byte and not v1
        noisy = prob > 0.0 and not v1 and not match
        total = 0
        for iteration in range(iterations):
            fire = match or (
                noisy and point_fraction(seed, position, candidate, iteration) < prob
            )
            program(slot, value)
            record(scaffold)
            if fire:
                record(transmit)
            total += read(slot)
        scores[candidate] = total
    best = 0
    best_score = scores[0]
    for candidate in range(1, 256):
        if scores[candidate] > best_score:
            best, best_score = candidate, scores[candidate]
    return best, scores


@dataclass(frozen=True)
class RecoveryResult:
    recovered_bytes: bytes
    per_byte_scores: tuple[tuple[int, ...], ...]
    elapsed_seconds: float
    attack_kind: str

    def confidences(self) -> list[float]:
        """Per-byte relative margin of the winning score; 0.0 = no signal."""
        margins: list[float] = []
        for scores in self.per_byte_scores:
            top = max(scores)
            if top <= 0:
                margins.append(0.0)
                continue
            runner_up = max(s for i, s in enumerate(scores) if i != scores.index(top))
            margins.append((top - runner_up) / top)
        return margins


def recover_secret(spec: GadgetSpec, backend: CounterBackend, victim: SimVictim) -> RecoveryResult:
    """Recover the first secret_length bytes of the victim's secret.

    Elapsed time is modeled: executed trials times the calibrated per-trial
    cost for the gadget flavour, which keeps results reproducible.
    """
    if spec.secret_length > len(victim.secret):
        raise ValueError(
            f"spec wants {spec.secret_length} bytes but the victim holds {len(victim.secret)}"
        )
    cost = trial_cost_seconds(spec.attack_kind, spec.suppression)
    recovered = bytearray()
    all_scores: list[tuple[int, ...]] = []
    for position in range(spec.secret_length):
        byte, scores = recover_byte(spec, position, backend, victim)
        recovered.append(byte)
        all_scores.append(tuple(scores))
    trials = spec.secret_length * 256 * spec.iterations
    return RecoveryResult(
        recovered_bytes=bytes(recovered),
        per_byte_scores=tuple(all_scores),
        elapsed_seconds=trials * cost,
        attack_kind=spec.attack_kind,
    )


@dataclass(frozen=True)
class ChannelMetrics:
    throughput_bps: float
    error_rate: float


def channel_metrics(result: RecoveryResult, true_secret: bytes) -> ChannelMetrics:
    """Bytes per second and fraction of wrongly recovered bytes."""
    n = len(result.recovered_bytes)
    if len(true_secret) < n:
        raise ValueError("true secret shorter than the recovered prefix")
    mismatches = sum(
        1 for got, want in zip(result.recovered_bytes, true_secret) if got != want
    )
    return ChannelMetrics(
        throughput_bps=n / result.elapsed_seconds,
        error_rate=mismatches / n,
    )


def transmit_capable_selectors(
    families: Iterable[SimEventFamily], transmit_class: str
) -> list[EventSelector]:
    """All selectors whose family counts the transmit class, packed order."""
    out: list[EventSelector] = []
    for family in families:
        if transmit_class in family.trigger_classes:
            for umask in range(256):
                if umask_gates(umask, family.relevance_mask):
                    out.append(EventSelector(family.event_code, umask))
    return sorted(out, key=lambda s: s.packed)


def screen_channel_events(
    selectors: Iterable[EventSelector],
    template: GadgetSpec,
    backend: CounterBackend,
    victim: SimVictim,
    min_accuracy: float = 0.80,
) -> list[tuple[EventSelector, float]]:
    """Try the channel through each selector and keep the usable ones.

    Accuracy is 1 - error_rate against the victim's own secret; selectors
    below min_accuracy are dropped.  Results stay in packed order.
    """
    kept: list[tuple[EventSelector, float]] = []
    for selector in sorted(selectors, key=lambda s: s.packed):
        result = recover_secret(replace(template, bound_selector=selector), backend, victim)
        metrics = channel_metrics(result, victim.secret)
        accuracy = 1.0 - metrics.error_rate
        if accuracy >= min_accuracy:
            kept.append((selector, accuracy))
    return kept


def write_result_json(
    selector: EventSelector,
    spec: GadgetSpec,
    result: RecoveryResult,
    metrics: ChannelMetrics,
    path: str,
) -> None:
    doc = {
        "attack": result.attack_kind,
        "selector": format_selector(selector),
        "suppression": spec.suppression,
        "iterations": spec.iterations,
        "recovered_hex": result.recovered_bytes.hex(),
        "per_byte_confidence": [round(c, 6) for c in result.confidences()],
        "throughput_bps": round(metrics.throughput_bps, 6),
        "error_rate": round(metrics.error_rate, 6),
        "elapsed_seconds": round(result.elapsed_seconds, 9),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
