"""Reading, writing, segmenting and synthesizing silicon-retina event streams.

Events are kept as plain ``EventRecord`` tuples (time in microseconds, pixel
column, pixel row, polarity). Two on-disk formats are understood:

* the 4-column CSV interchange format ``t_us,x,y,p``
* AEDAT 3.1 files as shipped with the DVS128 Gesture dataset (polarity packets
  only, every other packet type is skipped)
"""
from __future__ import annotations

import csv
import io
import re
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import BinaryIO, Iterable, NamedTuple, Sequence

import numpy as np

CSV_HEADER = "t,x,y,p"

AEDAT31_MAGIC = b"#!AER-DAT3.1"
AEDAT_PACKET_HEADER = struct.Struct("<hhiiiiii")
POLARITY_EVENT = 1

SYNTHETIC_KINDS = ("spiral_cw", "spiral_ccw", "horizontal_sweep")
SYNTHETIC_LABELS = {kind: i for i, kind in enumerate(SYNTHETIC_KINDS)}


class EventFormatError(ValueError):
    """Malformed input. ``line`` or ``offset`` locates the problem when known."""

    def __init__(self, message: str, *, line: int | None = None, offset: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.line = line
        self.offset = offset


class TruncatedFileError(EventFormatError):
    pass


class EventBoundsError(ValueError):
    pass


class InvalidWindowError(ValueError):
    pass


class EmptyTrialError(ValueError):
    pass


class Polarity(IntEnum):
    OFF = 0
    ON = 1


class EventRecord(NamedTuple):
    t: int
    x: int
    y: int
    polarity: Polarity


@dataclass(frozen=True)
class SensorGeometry:
    width: int = 128
    height: int = 128

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"sensor geometry must be at least 1x1, got {self.width}x{self.height}")

    def contains(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height


DVS128 = SensorGeometry(128, 128)


@dataclass
class TrialSegment:
    """One labeled sample cut out of a recording.

    ``t_start``/``t_end`` are absolute stream times; the events themselves are
    re-based so that ``t_start`` maps to 0.
    """

    class_label: int
    t_start: int
    t_end: int
    events: list[EventRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.t_start >= self.t_end:
            raise InvalidWindowError(f"trial window [{self.t_start}, {self.t_end}) is empty")

    @property
    def duration(self) -> int:
        return self.t_end - self.t_start

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(t, x, y, p)`` as int64 arrays."""
        if not self.events:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty.copy(), empty.copy(), empty.copy()
        arr = np.asarray(self.events, dtype=np.int64)
        return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]


def _check_bounds(x: int, y: int, geometry: SensorGeometry, where: str) -> None:
    if not geometry.contains(x, y):
        raise EventBoundsError(
            f"event at ({x}, {y}) outside {geometry.width}x{geometry.height} sensor ({where})"
        )


def _text_lines(reader) -> Iterable[str]:
    if isinstance(reader, io.TextIOBase):
        yield from reader
        return
    for raw in reader:
        yield raw.decode("utf-8")


def parse_csv_events(reader: BinaryIO, geometry: SensorGeometry = DVS128) -> list[EventRecord]:
    """Parse ``t_us,x,y,p`` lines into events sorted by time.

    An optional ``t,x,y,p`` header is accepted on the first line. Unsorted input
    is stable-sorted by timestamp.
    """
    events = []
    for lineno, line in enumerate(_text_lines(reader), start=1):
        line = line.strip()
        if not line:
            continue
        if lineno == 1 and line.replace(" ", "") == CSV_HEADER:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise EventFormatError(f"expected 4 fields, got {len(parts)}", line=lineno)
        try:
            t, x, y, p = (int(v) for v in parts)
        except ValueError:
            raise EventFormatError(f"non-integer field in {line!r}", line=lineno) from None
        if t < 0 or p not in (0, 1):
            raise EventFormatError(f"bad timestamp or polarity in {line!r}", line=lineno)
        _check_bounds(x, y, geometry, f"line {lineno}")
        events.append(EventRecord(t, x, y, Polarity(p)))
    events.sort(key=lambda e: e.t)
    return events


def write_csv_events(events: Sequence[EventRecord], writer: BinaryIO, header: bool = False) -> None:
    out = []
    if header:
        out.append(CSV_HEADER + "\n")
    out.extend(f"{e.t},{e.x},{e.y},{int(e.polarity)}\n" for e in events)
    writer.write("".join(out).encode("utf-8"))


def _geometry_from_header(header: str) -> SensorGeometry:
    size_x = re.search(r"sizeX[^0-9]*(\d+)", header)
    size_y = re.search(r"sizeY[^0-9]*(\d+)", header)
    if size_x and size_y:
        return SensorGeometry(int(size_x.group(1)), int(size_y.group(1)))
    if "DAVIS240" in header:
        return SensorGeometry(240, 180)
    if "DAVIS346" in header:
        return SensorGeometry(346, 260)
    return DVS128


def parse_aedat31(reader: BinaryIO, geometry: SensorGeometry | None = None) -> tuple[SensorGeometry, list[EventRecord]]:
    """Decode polarity events from an AEDAT 3.1 stream.

    Timestamps are reconstructed as ``(tsOverflow << 31) | timestamp``. Events
    whose valid bit is clear are dropped. ``geometry`` overrides whatever the
    ASCII header implies.
    """
    data = reader.read()
    if not data.startswith(AEDAT31_MAGIC):
        raise EventFormatError("missing #!AER-DAT3.1 header", offset=0)

    pos = 0
    header_lines = []
    while pos < len(data) and data[pos:pos + 1] == b"#":
        end = data.find(b"\n", pos)
        end = len(data) if end < 0 else end + 1
        line = data[pos:end].decode("ascii", errors="replace").rstrip("\r\n")
        header_lines.append(line)
        pos = end
        if line.startswith("#!END-HEADER"):
            break
    if geometry is None:
        geometry = _geometry_from_header("\n".join(header_lines))

    chunks = []
    while pos < len(data):
        if len(data) - pos < AEDAT_PACKET_HEADER.size:
            raise TruncatedFileError("truncated packet header", offset=pos)
        (ev_type, _source, ev_size, _ts_offset, ts_overflow,
         capacity, number, _valid) = AEDAT_PACKET_HEADER.unpack_from(data, pos)
        body_start = pos + AEDAT_PACKET_HEADER.size
        body_len = capacity * ev_size
        if ev_size <= 0 or capacity < 0 or number > capacity:
            raise EventFormatError(f"inconsistent packet header (size={ev_size}, "
                                   f"capacity={capacity}, number={number})", offset=pos)
        if body_start + body_len > len(data):
            raise TruncatedFileError("truncated packet body", offset=body_start)
        if ev_type == POLARITY_EVENT and number > 0:
            if ev_size < 8 or ev_size % 4:
                raise EventFormatError(f"bad polarity event size {ev_size}", offset=pos)
            words = np.frombuffer(data, dtype="<u4", count=number * ev_size // 4, offset=body_start)
            words = words.reshape(number, ev_size // 4)
            word, ts = words[:, 0], words[:, 1].astype(np.int64)
            valid = (word & 1).astype(bool)
            ts = ts | (np.int64(ts_overflow) << 31)
            x = (word >> 17) & 0x7FFF
            y = (word >> 2) & 0x7FFF
            p = (word >> 1) & 1
            chunks.append(np.stack([ts, x, y, p], axis=1)[valid])
        pos = body_start + body_len

    if not chunks:
        return geometry, []
    table = np.concatenate(chunks).astype(np.int64)
    bad = (table[:, 1] >= geometry.width) | (table[:, 2] >= geometry.height)
    if bad.any():
        i = int(np.argmax(bad))
        _check_bounds(int(table[i, 1]), int(table[i, 2]), geometry, f"event {i}")
    table = table[np.argsort(table[:, 0], kind="stable")]
    return geometry, [EventRecord(int(t), int(x), int(y), Polarity(int(p))) for t, x, y, p in table]


def load_labels(reader: BinaryIO) -> list[tuple[int, int, int]]:
    """Read a ``class,startTime_usec,endTime_usec`` trial table in file order."""
    rows = []
    for lineno, row in enumerate(csv.reader(_text_lines(reader)), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if lineno == 1 and not row[0].strip().lstrip("-").isdigit():
            continue
        if len(row) != 3:
            raise EventFormatError(f"expected 3 fields, got {len(row)}", line=lineno)
        try:
            rows.append(tuple(int(c) for c in row))
        except ValueError:
            raise EventFormatError(f"non-integer field in {row!r}", line=lineno) from None
    return rows


def segment_trials(
    events: Sequence[EventRecord],
    labels: Iterable[tuple[int, int, int]],
    keep: Iterable[int],
) -> list[TrialSegment]:
    """Cut one ``TrialSegment`` per label row whose class is in ``keep``.

    Overlapping windows each receive a copy of the shared events.
    """
    keep = set(keep)
    labels = list(labels)
    for cls, t0, t1 in labels:
        if t0 >= t1:
            raise InvalidWindowError(f"label window [{t0}, {t1}) for class {cls} is empty")
    times = np.fromiter((e.t for e in events), dtype=np.int64, count=len(events))
    segments = []
    for cls, t0, t1 in labels:
        if cls not in keep:
            continue
        lo, hi = np.searchsorted(times, [t0, t1], side="left")
        local = [EventRecord(e.t - t0, e.x, e.y, e.polarity) for e in events[lo:hi]]
        segments.append(TrialSegment(cls, t0, t1, local))
    return segments


def gen_synthetic_pattern(
    kind: str,
    duration: int,
    geometry: SensorGeometry = DVS128,
    seed: int = 0,
    event_rate: float = 20.0,
    noise_rate: float = 0.05,
    jitter_px: float = 1.5,
) -> TrialSegment:
    """Generate a labeled synthetic trial following a parametric path.

    ``event_rate`` and ``noise_rate`` are events per millisecond. The two
    spirals share their spatial support for a given seed: ``spiral_ccw`` is
    ``spiral_cw`` played backwards (inward, counter-clockwise).
    """
    if kind not in SYNTHETIC_LABELS:
        raise ValueError(f"unknown pattern kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    if duration <= 0:
        raise EmptyTrialError(f"synthetic trial needs a positive duration, got {duration}")
    rng = np.random.default_rng(seed)
    w, h = geometry.width, geometry.height
    n_path = rng.poisson(event_rate * duration / 1000.0)
    n_noise = rng.poisson(noise_rate * duration / 1000.0)
    s = np.sort(rng.uniform(0.0, 1.0, n_path))

    if kind == "horizontal_sweep":
        x_start = 0.1 * w + rng.uniform(-0.04, 0.04) * w
        x_stop = 0.9 * w + rng.uniform(-0.04, 0.04) * w
        y_lo = 0.3 * h + rng.uniform(-0.05, 0.05) * h
        y_hi = y_lo + 0.4 * h
        px = x_start + (x_stop - x_start) * s
        py = rng.uniform(y_lo, y_hi, n_path)
    else:
        cx = 0.5 * w + rng.uniform(-0.04, 0.04) * w
        cy = 0.5 * h + rng.uniform(-0.04, 0.04) * h
        r_max = 0.4 * min(w, h) * rng.uniform(0.9, 1.0)
        phase = rng.uniform(-0.5, 0.5)
        turns = 1.5
        radius = 0.1 * r_max + 0.9 * r_max * s
        # image rows grow downward, so a positive angle step turns clockwise on screen
        angle = phase + 2.0 * np.pi * turns * s
        px = cx + radius * np.cos(angle)
        py = cy + radius * np.sin(angle)

    px = np.clip(np.rint(px + rng.normal(0.0, jitter_px, n_path)), 0, w - 1).astype(np.int64)
    py = np.clip(np.rint(py + rng.normal(0.0, jitter_px, n_path)), 0, h - 1).astype(np.int64)
    t = np.minimum((s * duration).astype(np.int64), duration - 1)
    pol = rng.integers(0, 2, n_path)

    nt = rng.integers(0, duration, n_noise)
    nx = rng.integers(0, w, n_noise)
    ny = rng.integers(0, h, n_noise)
    npol = rng.integers(0, 2, n_noise)

    t = np.concatenate([t, nt])
    x = np.concatenate([px, nx])
    y = np.concatenate([py, ny])
    p = np.concatenate([pol, npol])
    if kind == "spiral_ccw":
        t = duration - 1 - t
    order = np.lexsort((y, x, t))
    events = [EventRecord(int(t[i]), int(x[i]), int(y[i]), Polarity(int(p[i]))) for i in order]
    return TrialSegment(SYNTHETIC_LABELS[kind], 0, duration, events)
