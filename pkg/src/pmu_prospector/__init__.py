"""Toolkit for discovering and exploiting undocumented PMU events.

The pipeline scans the full 16-bit event-selector space against an
instruction corpus, analyzes which umask bits discovered events decode,
trains per-event logistic detectors for transient-execution attacks, and
drives a count-based covert channel.  All measurement goes through a
pluggable counter backend, so everything can run against a deterministic
simulated PMU.
"""

from .backend import (
    BackendCapabilities,
    CounterBackend,
    CounterSlot,
    NativeMsrBackend,
    SimEventFamily,
    SimModel,
    SimulatedPmu,
    load_sim_model,
    measure_delta,
)
from .collector import (
    ScanConfig,
    ScanRecord,
    ScanReport,
    full_scan,
    load_report,
    persist_report,
    scan_instruction,
)
from .corpus import (
    InstructionEntry,
    NativeExecutor,
    RegisterPool,
    SimulatedExecutor,
    Snippet,
    instantiate,
    load_corpus_file,
    normalize_syntax,
    parse_corpus,
)
from .detection import (
    LabeledDataset,
    LogisticDetector,
    LogisticModel,
    MetricsReport,
    ScenarioSpec,
    ScreenCriteria,
    build_dataset,
    collect_samples,
    compute_metrics,
    scenario_suite,
    screen,
    train,
)
from .errors import ProspectorError
from .events import (
    EventCatalog,
    EventSelector,
    PerfEvtSelValue,
    decode_msr_value,
    enumerate_space,
    format_selector,
    load_catalog,
    pack_selector,
    parse_selector,
    render_msr_value,
    scan_control,
    unpack_selector,
)
from .sidechannel import (
    ChannelMetrics,
    GadgetSpec,
    RecoveryResult,
    SimVictim,
    channel_metrics,
    recover_byte,
    recover_secret,
    run_trial,
    screen_channel_events,
)
from .umask import (
    RelevanceMask,
    RelevanceObservation,
    group_hidden_by_event_code,
    infer_relevance_mask,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
