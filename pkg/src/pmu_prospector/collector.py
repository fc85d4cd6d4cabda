"""Full-space scan orchestration and scan-report persistence.

The scan walks the instruction corpus (outer loop) and the 65536-point
selector space (inner loop, packed order), programming four selectors at a
time across the programmable slots so one workload run measures four
candidates.  A selector is readable for an instruction when the median
delta over the repetitions reaches the quiet threshold; readable selectors
absent from the documented catalog are the hidden events.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Callable, Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .backend import SLOTS, BackendError
from .corpus import (
    DEFAULT_POOL,
    ExecStatus,
    InstructionEntry,
    RegisterPool,
    SIGNAL_HANDLER,
    Snippet,
    instantiate,
    normalize_syntax,
)
from .errors import InstantiationError, NormalizationError, ReportParseError
from .events import (
    EVENT_SPACE_SIZE,
    EventCatalog,
    EventSelector,
    PerfEvtSelValue,
    format_selector,
    parse_selector,
    scan_control,
    unpack_selector,
)

log = logging.getLogger(__name__)

_BATCH = len(SLOTS)


@dataclass(frozen=True)
class ScanConfig:
    repetitions: int = 5
    quiet_threshold: int = 1
    mode: str = SIGNAL_HANDLER
    any_thread: bool = False

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.quiet_threshold < 1:
            raise ValueError("quiet threshold must be at least 1")


@dataclass(frozen=True)
class ScanRecord:
    selector: EventSelector
    instruction_id: int
    delta: int
    outcome: ExecStatus
    repetitions: int


@dataclass
class ScanReport:
    """Scan result: which undocumented selectors react to which instructions."""

    microarchitecture_label: str
    total_instructions: int
    executed_success: int
    hidden_events: dict[EventSelector, set[int]] = field(default_factory=dict)
    catalog_source: str = ""

    def hidden_count(self) -> int:
        return len(self.hidden_events)


def _median_low(values: list[int]) -> int:
    # lower middle element; keeps medians integral for even repetition counts
    return sorted(values)[(len(values) - 1) // 2]


def control_values(any_thread: bool = False) -> list[PerfEvtSelValue]:
    """Scan control values for the whole space, indexed by packed selector."""
    return [scan_control(unpack_selector(p), any_thread) for p in range(EVENT_SPACE_SIZE)]


def _measure_batch(executor, snippet: Snippet, values: Sequence[PerfEvtSelValue],
                   mode: str, repetitions: int) -> tuple[list[int], ExecStatus]:
    """Median deltas for up to four selector values measured together."""
    backend = executor.backend
    n = len(values)
    per_value: list[list[int]] = [[] for _ in range(n)]
    status = ExecStatus.SUCCESS
    for _ in range(repetitions):
        for j in range(n):
            backend.program(SLOTS[j], values[j])
        status = executor.execute(snippet, mode).status
        for j in range(n):
            per_value[j].append(backend.read(SLOTS[j]))
    return [_median_low(deltas) for deltas in per_value], status


def scan_instruction(
    entry: InstructionEntry,
    selectors: Iterable[EventSelector],
    executor,
    config: ScanConfig = ScanConfig(),
    pool: RegisterPool = DEFAULT_POOL,
) -> list[ScanRecord]:
    """Measure one instruction against the given selectors.

    Selectors are visited in the given order, four per workload run; the
    recorded delta is the median across repetitions.
    """
    snippet = instantiate(normalize_syntax(entry, executor.dialect), pool)
    values = [scan_control(s, config.any_thread) for s in selectors]
    records: list[ScanRecord] = []
    for base in range(0, len(values), _BATCH):
        batch = values[base : base + _BATCH]
        medians, status = _measure_batch(executor, snippet, batch, config.mode, config.repetitions)
        for value, median in zip(batch, medians):
            records.append(
                ScanRecord(value.selector, entry.id, median, status, config.repetitions)
            )
    return records


def _scan_chunk(executor, snippet: Snippet, values: Sequence[PerfEvtSelValue],
                start: int, stop: int, config: ScanConfig,
                want_all: bool) -> tuple[dict[int, int], list[int] | None, ExecStatus | None]:
    """Scan one contiguous packed-selector chunk for one instruction.

    Returns nonzero median deltas keyed by packed selector, optionally the
    full per-selector median list (for record streaming), and the workload
    outcome.  Backend failures skip the affected batch and keep scanning.
    """
    backend = executor.backend
    program = backend.program
    read = backend.read
    execute = executor.execute
    mode = config.mode
    repetitions = config.repetitions
    slots = SLOTS
    nonzero: dict[int, int] = {}
    all_medians: list[int] | None = [0] * (stop - start) if want_all else None
    status: ExecStatus | None = None
    for base in range(start, stop, _BATCH):
        high = min(base + _BATCH, stop)
        try:
            if repetitions == 1:
                for j in range(base, high):
                    program(slots[j - base], values[j])
                status = execute(snippet, mode).status
                for j in range(base, high):
                    delta = read(slots[j - base])
                    if want_all:
                        all_medians[j - start] = delta
                    if delta:
                        nonzero[j] = delta
            else:
                batch_deltas = [[0] * repetitions for _ in range(high - base)]
                for rep in range(repetitions):
                    for j in range(base, high):
                        program(slots[j - base], values[j])
                    status = execute(snippet, mode).status
                    for j in range(base, high):
                        batch_deltas[j - base][rep] = read(slots[j - base])
                for offset, deltas in enumerate(batch_deltas):
                    median = _median_low(deltas)
                    if want_all:
                        all_medians[base - start + offset] = median
                    if median:
                        nonzero[base + offset] = median
        except BackendError as exc:
            log.warning(
                "backend failure scanning selectors 0x%04X..0x%04X for id %d: %s",
                base, high - 1, snippet.entry_id, exc,
            )
    return nonzero, all_medians, status


def _partition(size: int, parts: int) -> list[tuple[int, int]]:
    # contiguous chunks aligned to the batch width so batches never straddle partitions
    parts = max(1, parts)
    chunk = -(-size // parts)
    chunk += (-chunk) % _BATCH
    bounds = []
    start = 0
    while start < size:
        stop = min(start + chunk, size)
        bounds.append((start, stop))
        start = stop
    return bounds


def full_scan(
    entries: Iterable[InstructionEntry],
    catalog: EventCatalog,
    executors,
    config: ScanConfig = ScanConfig(),
    pool: RegisterPool = DEFAULT_POOL,
    record_sink: Callable[[ScanRecord], None] | None = None,
) -> ScanReport:
    """Scan every corpus instruction against the full selector space.

    `executors` is one executor or a list; with a list the selector space is
    partitioned contiguously across them and chunks run on worker threads.
    Chunk results are merged in packed order, so the report is identical for
    any partitioning.  Instructions whose templates cannot be instantiated
    are skipped (and logged); they still count toward total_instructions.
    """
    executor_list = list(executors) if isinstance(executors, (list, tuple)) else [executors]
    if not executor_list:
        raise ValueError("at least one executor is required")
    values = control_values(config.any_thread)
    chunks = _partition(EVENT_SPACE_SIZE, len(executor_list))
    documented = frozenset(s.packed for s in catalog.entries)
    hidden: dict[int, set[int]] = {}
    total = 0
    executed_success = 0
    threshold = config.quiet_threshold
    thread_pool = ThreadPoolExecutor(max_workers=len(executor_list)) if len(executor_list) > 1 else None
    try:
        for entry in entries:
            total += 1
            try:
                snippet = instantiate(normalize_syntax(entry, executor_list[0].dialect), pool)
            except (NormalizationError, InstantiationError) as exc:
                log.warning("skipping id %d (%s): %s", entry.id, entry.mnemonic, exc)
                continue
            want_all = record_sink is not None
            if thread_pool is None:
                results = [
                    _scan_chunk(executor_list[0], snippet, values, start, stop, config, want_all)
                    for start, stop in chunks
                ]
            else:
                futures = [
                    thread_pool.submit(
                        _scan_chunk, executor_list[i % len(executor_list)],
                        snippet, values, start, stop, config, want_all,
                    )
                    for i, (start, stop) in enumerate(chunks)
                ]
                results = [f.result() for f in futures]
            status = next((s for _, _, s in results if s is not None), None)
            if status is ExecStatus.SUCCESS:
                executed_success += 1
            for nonzero, _, _ in results:
                for packed, median in nonzero.items():
                    if median >= threshold and packed not in documented:
                        hidden.setdefault(packed, set()).add(entry.id)
            if record_sink is not None:
                for (start, _), (_, medians, _) in zip(chunks, results):
                    assert medians is not None
                    for offset, median in enumerate(medians):
                        record_sink(
                            ScanRecord(
                                unpack_selector(start + offset), entry.id, median,
                                status or ExecStatus.SUCCESS, config.repetitions,
                            )
                        )
    finally:
        if thread_pool is not None:
            thread_pool.shutdown()
    return ScanReport(
        microarchitecture_label=_backend_label(executor_list[0]),
        total_instructions=total,
        executed_success=executed_success,
        hidden_events={
            unpack_selector(packed): ids for packed, ids in sorted(hidden.items())
        },
        catalog_source="",
    )


def _backend_label(executor) -> str:
    backend = getattr(executor, "backend", None)
    return getattr(backend, "label", "native")


_REPORT_FORMAT = "pmu-prospector-scan-v1"


def ndjson_record_sink(fh) -> Callable[[ScanRecord], None]:
    """Record sink streaming one JSON object per measured selector."""

    def sink(record: ScanRecord) -> None:
        fh.write(
            json.dumps(
                {
                    "selector": format_selector(record.selector),
                    "instruction": record.instruction_id,
                    "delta": record.delta,
                    "outcome": record.outcome.value,
                },
                sort_keys=True,
            )
        )
        fh.write("\n")

    return sink


def persist_report(report: ScanReport, path: str) -> None:
    """Write a scan report as a single sorted JSON document.

    Selector keys use the fixed-width "0xUUEE" form, so lexicographic key
    order equals packed order and repeated writes are byte-identical.
    """
    doc = {
        "format": _REPORT_FORMAT,
        "microarchitecture": report.microarchitecture_label,
        "catalog_source": report.catalog_source,
        "total_instructions": report.total_instructions,
        "executed_success": report.executed_success,
        "hidden_events": {
            format_selector(selector): sorted(ids)
            for selector, ids in report.hidden_events.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(path: str) -> ScanReport:
    """Load a persisted scan report, round-tripping persist_report exactly."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ReportParseError(f"cannot read report {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ReportParseError(
            f"report {path} is not well-formed JSON at byte offset {exc.pos}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict) or doc.get("format") != _REPORT_FORMAT:
        raise ReportParseError(f"report {path} lacks the {_REPORT_FORMAT} format marker")
    try:
        raw_hidden = doc["hidden_events"]
        hidden: dict[EventSelector, set[int]] = {}
        for key, ids in raw_hidden.items():
            if not isinstance(ids, list) or not all(
                isinstance(i, int) and not isinstance(i, bool) for i in ids
            ):
                raise ReportParseError(
                    f"report {path}: hidden_events[{key!r}] must be a list of integers"
                )
            hidden[parse_selector(key)] = set(ids)
        return ScanReport(
            microarchitecture_label=str(doc["microarchitecture"]),
            total_instructions=int(doc["total_instructions"]),
            executed_success=int(doc["executed_success"]),
            hidden_events=hidden,
            catalog_source=str(doc.get("catalog_source", "")),
        )
    except ReportParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ReportParseError(f"report {path} has an invalid field: {exc}") from exc
