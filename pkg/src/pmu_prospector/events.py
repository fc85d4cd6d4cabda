"""Event-selection register model and 16-bit event-space enumeration.

A performance event is addressed by the pair (event_code, umask), each one
byte wide.  The full space therefore has 65536 points, identified by the
packed value umask * 256 + event_code and written "0xUUEE" (umask high byte,
event code low byte).  Selection registers are programmed with a 64-bit
image whose low 32 bits carry the pair plus control flags; bits 63:32 are
reserved and must be zero.
"""

from __future__ import annotations

import csv
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field

from .errors import CatalogError

EVENT_SPACE_SIZE = 1 << 16

# Control-flag bit positions in the 64-bit selection register image.
_BIT_USR = 16
_BIT_OS = 17
_BIT_EDGE = 18
_BIT_PIN_CONTROL = 19
_BIT_INTERRUPT_ENABLE = 20
_BIT_ANY_THREAD = 21
_BIT_ENABLE = 22
_BIT_INVERT = 23
_SHIFT_COUNTER_MASK = 24


def _check_byte(name: str, value: int) -> None:
    if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value <= 0xFF:
        raise ValueError(f"{name} must be an integer in [0, 255], got {value!r}")


@dataclass(frozen=True, order=True)
class EventSelector:
    """One point of the event space: an (event_code, umask) byte pair."""

    event_code: int
    umask: int

    def __post_init__(self) -> None:
        _check_byte("event_code", self.event_code)
        _check_byte("umask", self.umask)

    @property
    def packed(self) -> int:
        return (self.umask << 8) | self.event_code

    def __str__(self) -> str:
        return format_selector(self)


def pack_selector(selector: EventSelector) -> int:
    """Packed 16-bit identity: umask in the high byte, event code in the low byte."""
    return selector.packed


def unpack_selector(packed: int) -> EventSelector:
    if not 0 <= packed < EVENT_SPACE_SIZE:
        raise ValueError(f"packed selector out of range: {packed!r}")
    return EventSelector(event_code=packed & 0xFF, umask=packed >> 8)


def format_selector(selector: EventSelector) -> str:
    return f"0x{selector.umask:02X}{selector.event_code:02X}"


def parse_selector(text: str) -> EventSelector:
    """Parse the "0xUUEE" form produced by format_selector."""
    t = text.strip()
    try:
        packed = int(t, 16)
    except ValueError:
        raise ValueError(f"not a hexadecimal selector: {text!r}") from None
    return unpack_selector(packed)


def enumerate_space() -> Iterator[EventSelector]:
    """Yield all 65536 selectors ordered by packed identity ascending."""
    for packed in range(EVENT_SPACE_SIZE):
        yield EventSelector(event_code=packed & 0xFF, umask=packed >> 8)


@dataclass(frozen=True)
class PerfEvtSelValue:
    """Decoded image of one event-selection register.

    counter_mask occupies bits 31:24; all flags are single bits.  The image
    never uses bits 63:32.
    """

    selector: EventSelector
    usr: bool = False
    os: bool = False
    edge: bool = False
    pin_control: bool = False
    interrupt_enable: bool = False
    any_thread: bool = False
    enable: bool = False
    invert: bool = False
    counter_mask: int = 0

    def __post_init__(self) -> None:
        _check_byte("counter_mask", self.counter_mask)


def render_msr_value(value: PerfEvtSelValue) -> int:
    """Encode a selection value into its 64-bit register image."""
    raw = value.selector.event_code | (value.selector.umask << 8)
    raw |= value.usr << _BIT_USR
    raw |= value.os << _BIT_OS
    raw |= value.edge << _BIT_EDGE
    raw |= value.pin_control << _BIT_PIN_CONTROL
    raw |= value.interrupt_enable << _BIT_INTERRUPT_ENABLE
    raw |= value.any_thread << _BIT_ANY_THREAD
    raw |= value.enable << _BIT_ENABLE
    raw |= value.invert << _BIT_INVERT
    raw |= value.counter_mask << _SHIFT_COUNTER_MASK
    return raw


def decode_msr_value(raw: int) -> PerfEvtSelValue:
    """Decode a 64-bit register image; reserved high bits must be clear."""
    if not 0 <= raw < (1 << 64):
        raise ValueError(f"register image out of 64-bit range: {raw!r}")
    if raw >> 32:
        raise ValueError(f"reserved bits 63:32 set in register image 0x{raw:016X}")
    return PerfEvtSelValue(
        selector=EventSelector(event_code=raw & 0xFF, umask=(raw >> 8) & 0xFF),
        usr=bool(raw & (1 << _BIT_USR)),
        os=bool(raw & (1 << _BIT_OS)),
        edge=bool(raw & (1 << _BIT_EDGE)),
        pin_control=bool(raw & (1 << _BIT_PIN_CONTROL)),
        interrupt_enable=bool(raw & (1 << _BIT_INTERRUPT_ENABLE)),
        any_thread=bool(raw & (1 << _BIT_ANY_THREAD)),
        enable=bool(raw & (1 << _BIT_ENABLE)),
        invert=bool(raw & (1 << _BIT_INVERT)),
        counter_mask=(raw >> _SHIFT_COUNTER_MASK) & 0xFF,
    )


def scan_control(selector: EventSelector, any_thread: bool = False) -> PerfEvtSelValue:
    """Default control value used while probing: count in user and kernel
    mode with the counter enabled, everything else off."""
    return PerfEvtSelValue(
        selector=selector, usr=True, os=True, enable=True, any_thread=any_thread
    )


def umask_gates(umask: int, relevance_mask: int) -> bool:
    """Whether a umask activates an event family with the given relevant bits.

    A family with relevance_mask 0 ignores the umask and counts regardless;
    otherwise at least one relevant bit must be set in the umask.
    """
    _check_byte("umask", umask)
    _check_byte("relevance_mask", relevance_mask)
    return relevance_mask == 0 or (umask & relevance_mask) != 0


@dataclass(frozen=True)
class EventCatalog:
    """Documented events of one microarchitecture, keyed by selector."""

    entries: dict[EventSelector, str] = field(default_factory=dict)
    source: str = ""

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, selector: EventSelector) -> bool:
        return selector in self.entries

    def name_of(self, selector: EventSelector) -> str | None:
        return self.entries.get(selector)


def is_documented(selector: EventSelector, catalog: EventCatalog) -> bool:
    return selector in catalog


def _parse_hex_byte(field_name: str, text: str, where: str) -> int:
    t = text.strip()
    if not t.lower().startswith("0x"):
        raise CatalogError(f"{where}: {field_name} {text!r} lacks the 0x prefix")
    try:
        value = int(t, 16)
    except ValueError:
        raise CatalogError(f"{where}: {field_name} {text!r} is not hexadecimal") from None
    if not 0 <= value <= 0xFF:
        raise CatalogError(f"{where}: {field_name} {text!r} out of byte range")
    return value


def load_catalog(lines: Iterable[str], source: str = "") -> EventCatalog:
    """Load a documented-event catalog from CSV text.

    Expected columns: event_code,umask,name with 0x-prefixed hex codes.
    A header row is recognised and skipped.  Duplicate (event_code, umask)
    keys make the catalog ambiguous and fail the load.
    """
    entries: dict[EventSelector, str] = {}
    reader = csv.reader(lines)
    for row_no, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if row[0].strip().startswith("#"):
            continue
        where = f"{source or 'catalog'}:{row_no}"
        if row_no == 1 and row[0].strip().lower() == "event_code":
            continue
        if len(row) != 3:
            raise CatalogError(f"{where}: expected 3 columns, got {len(row)}")
        selector = EventSelector(
            event_code=_parse_hex_byte("event_code", row[0], where),
            umask=_parse_hex_byte("umask", row[1], where),
        )
        if selector in entries:
            raise CatalogError(f"{where}: duplicate catalog key {format_selector(selector)}")
        entries[selector] = row[2].strip()
    return EventCatalog(entries=entries, source=source)


def load_catalog_file(path: str) -> EventCatalog:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            return load_catalog(fh, source=path)
    except OSError as exc:
        raise CatalogError(f"cannot read catalog {path}: {exc}") from exc
