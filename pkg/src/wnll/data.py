"""Ingestion: parse click logs, hash features, campaign economics, time splits.

Line layout (delimiter-separated, default tab)::

    click_ts  conversion_ts  campaign_id  num_1 .. num_k  cat_1 .. cat_m

An empty ``conversion_ts`` means the click did not convert.  Empty feature
fields are missing values.

Feature hashing uses 64-bit FNV-1a over the UTF-8 bytes of
``"<namespace>\\x1f<token>"``; the index is the hash modulo ``2**hash_bits``.
Namespaces are ``n<j>`` for numeric column ``j``, ``c<j>`` for categorical
column ``j`` and ``campaign`` for the campaign id.  Numeric values are first
bucketed to the token ``<sign><floor(log2(1 + |x|))>`` (e.g. ``+3``, ``-0``).
"""

from __future__ import annotations

import gzip
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import IO, Iterable, Iterator, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import BadTimestamp, DataError, EmptyWindow, MalformedLine

DAY = 86400
WEEK = 7 * DAY

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

RECORDS_FORMAT = "wnll-records"
RECORDS_VERSION = 1


@dataclass(frozen=True)
class DatasetSchema:
    numeric_arity: int = 0
    categorical_arity: int = 0
    hash_bits: int = 24
    delimiter: bytes = b"\t"
    # hash the campaign id as one more categorical feature
    campaign_feature: bool = True

    def __post_init__(self):
        if not 16 <= self.hash_bits <= 30:
            raise ValueError(f"hash_bits must be in [16, 30], got {self.hash_bits}")
        if self.numeric_arity < 0 or self.categorical_arity < 0:
            raise ValueError("arities must be non-negative")
        if isinstance(self.delimiter, str):
            object.__setattr__(self, "delimiter", self.delimiter.encode())
        if len(self.delimiter) != 1:
            raise ValueError("delimiter must be a single byte")

    @property
    def n_fields(self) -> int:
        return 3 + self.numeric_arity + self.categorical_arity


@dataclass
class RawEvent:
    click_timestamp: float
    conversion_timestamp: float | None
    campaign_id: str
    numeric_features: list[float | None] = field(default_factory=list)
    categorical_features: list[str | None] = field(default_factory=list)

    @property
    def converted(self) -> bool:
        return self.conversion_timestamp is not None


class SparseVector(NamedTuple):
    indices: np.ndarray  # int64, strictly increasing
    values: np.ndarray  # float64

    def squared_norm(self) -> float:
        return float(np.dot(self.values, self.values))

    def __len__(self) -> int:
        return len(self.indices)


EMPTY_VECTOR = SparseVector(np.empty(0, dtype=np.int64), np.empty(0))


@dataclass
class Record:
    features: SparseVector
    y: int
    cost: float = 1.0
    value: float = 1.0
    weight: float = 1.0
    campaign_id: str = ""
    timestamp: float = 0.0


@dataclass(frozen=True)
class CampaignStats:
    clicks: int
    sales: int
    smooth_cr: float
    cpa: float


# ---------------------------------------------------------------- parsing


def _parse_timestamp(text: str, what: str) -> float:
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
    except ValueError:
        raise BadTimestamp(f"non-numeric {what} timestamp {text!r}") from None
    if not math.isfinite(value):
        raise BadTimestamp(f"non-finite {what} timestamp {text!r}")
    return value


def _format_number(x: float) -> str:
    return str(x) if isinstance(x, int) else repr(float(x))


def parse_event(line: bytes, schema: DatasetSchema) -> RawEvent:
    """Parse one log line into a :class:`RawEvent`.

    Raises :class:`MalformedLine` on a wrong field count and
    :class:`BadTimestamp` on unparseable or inconsistent timestamps.
    """
    if isinstance(line, str):
        line = line.encode()
    line = line.rstrip(b"\r\n")
    parts = line.split(schema.delimiter)
    if len(parts) != schema.n_fields:
        raise MalformedLine(f"expected {schema.n_fields} fields, got {len(parts)}")
    fields = [p.decode("utf-8") for p in parts]

    click = _parse_timestamp(fields[0], "click")
    conv = _parse_timestamp(fields[1], "conversion") if fields[1] else None
    if conv is not None and conv < click:
        raise BadTimestamp(f"conversion at {conv} precedes click at {click}")

    k = schema.numeric_arity
    numeric: list[float | None] = []
    for text in fields[3 : 3 + k]:
        if not text:
            numeric.append(None)
            continue
        try:
            numeric.append(float(text))
        except ValueError:
            raise MalformedLine(f"non-numeric feature {text!r}") from None
    categorical = [t if t else None for t in fields[3 + k :]]
    return RawEvent(click, conv, fields[2], numeric, categorical)


def format_event(event: RawEvent, schema: DatasetSchema) -> bytes:
    """Inverse of :func:`parse_event` for canonically formatted lines."""
    fields = [
        _format_number(event.click_timestamp),
        "" if event.conversion_timestamp is None else _format_number(event.conversion_timestamp),
        event.campaign_id,
    ]
    fields += ["" if x is None else repr(float(x)) for x in event.numeric_features]
    fields += ["" if t is None else t for t in event.categorical_features]
    return schema.delimiter.join(f.encode("utf-8") for f in fields)


def _open(path: str | Path, mode: str = "rb") -> IO:
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode)
    return open(path, mode)


def read_events(path: str | Path, schema: DatasetSchema) -> Iterator[RawEvent]:
    """Stream events from a (optionally gzipped) log file; blank lines are skipped."""
    with _open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield parse_event(line, schema)
            except DataError as exc:
                raise type(exc)(f"{path}:{lineno}: {exc}") from None


def write_events(path: str | Path, events: Iterable[RawEvent], schema: DatasetSchema) -> None:
    with _open(path, "wb") as fh:
        for ev in events:
            fh.write(format_event(ev, schema) + b"\n")


# ---------------------------------------------------------------- hashing


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


@lru_cache(maxsize=1 << 20)
def hash64(namespace: str, token: str) -> int:
    return fnv1a_64(f"{namespace}\x1f{token}".encode("utf-8"))


def numeric_bucket(x: float) -> str:
    sign = "-" if x < 0 else "+"
    return f"{sign}{int(math.floor(math.log2(1.0 + abs(x))))}"


def _event_tokens(event: RawEvent, campaign_feature: bool) -> Iterator[tuple[str, str]]:
    if campaign_feature and event.campaign_id:
        yield "campaign", event.campaign_id
    for j, x in enumerate(event.numeric_features):
        if x is not None and math.isfinite(x):
            yield f"n{j}", numeric_bucket(x)
    for j, tok in enumerate(event.categorical_features):
        if tok is not None:
            yield f"c{j}", tok


def _to_sparse(indices: list[int]) -> SparseVector:
    if not indices:
        return EMPTY_VECTOR
    counts = Counter(indices)
    idx = np.array(sorted(counts), dtype=np.int64)
    return SparseVector(idx, np.array([float(counts[i]) for i in idx]))


def hash_features(event: RawEvent, d: int, *, campaign_feature: bool = False) -> SparseVector:
    """Hash an event's tokens into a sorted, deduplicated sparse vector in ``[0, 2**d)``.

    Colliding tokens merge by summing their values.  No intercept feature is
    added.  ``campaign_feature`` additionally hashes the campaign id.
    """
    if not 16 <= d <= 30:
        raise ValueError(f"hash bits must be in [16, 30], got {d}")
    mask = (1 << d) - 1
    return _to_sparse([hash64(ns, tok) & mask for ns, tok in _event_tokens(event, campaign_feature)])


def hash_events(events: Sequence[RawEvent], schema: DatasetSchema) -> sp.csr_matrix:
    """Hash many events into a CSR matrix with ``2**hash_bits`` columns."""
    mask = (1 << schema.hash_bits) - 1
    indptr = [0]
    indices: list[int] = []
    for ev in events:
        row = sorted(hash64(ns, tok) & mask for ns, tok in _event_tokens(ev, schema.campaign_feature))
        indices.extend(row)
        indptr.append(len(indices))
    X = sp.csr_matrix(
        (np.ones(len(indices)), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(events), 1 << schema.hash_bits),
    )
    X.sum_duplicates()  # merges collisions, keeps rows sorted
    return X


# ---------------------------------------------------------------- record sets


class RecordSet:
    """Columnar batch of records sharing one hashed feature space.

    ``X`` is a CSR matrix with ``2**hash_bits`` columns; the remaining
    attributes are aligned 1-d arrays.
    """

    def __init__(self, X, y, cost=None, value=None, weight=None, campaign=None, timestamp=None, hash_bits=None):
        X = sp.csr_matrix(X, dtype=np.float64)
        n = X.shape[0]
        if hash_bits is None:
            hash_bits = int(round(math.log2(X.shape[1])))
        if X.shape[1] != 1 << hash_bits:
            raise ValueError("feature matrix width must be 2**hash_bits")
        self.X = X
        self.hash_bits = hash_bits
        self.y = np.asarray(y, dtype=np.int8).reshape(n)
        self.cost = np.ones(n) if cost is None else np.asarray(cost, dtype=np.float64).reshape(n)
        self.value = np.ones(n) if value is None else np.asarray(value, dtype=np.float64).reshape(n)
        self.weight = np.ones(n) if weight is None else np.asarray(weight, dtype=np.float64).reshape(n)
        self.campaign = (
            np.full(n, "", dtype=object) if campaign is None else np.asarray(campaign, dtype=object).reshape(n)
        )
        self.timestamp = np.zeros(n) if timestamp is None else np.asarray(timestamp, dtype=np.float64).reshape(n)

    def __len__(self) -> int:
        return self.X.shape[0]

    def __repr__(self) -> str:
        return f"RecordSet(n={len(self)}, hash_bits={self.hash_bits}, positives={int(self.y.sum())})"

    def take(self, idx) -> "RecordSet":
        idx = np.asarray(idx)
        return RecordSet(
            self.X[idx],
            self.y[idx],
            self.cost[idx],
            self.value[idx],
            self.weight[idx],
            self.campaign[idx],
            self.timestamp[idx],
            self.hash_bits,
        )

    def with_weights(self, weight) -> "RecordSet":
        out = self.take(np.arange(len(self)))
        out.weight = np.asarray(weight, dtype=np.float64).reshape(len(self))
        return out

    def record(self, i: int) -> Record:
        lo, hi = self.X.indptr[i], self.X.indptr[i + 1]
        vec = SparseVector(self.X.indices[lo:hi].astype(np.int64), self.X.data[lo:hi].copy())
        return Record(
            vec,
            int(self.y[i]),
            float(self.cost[i]),
            float(self.value[i]),
            float(self.weight[i]),
            str(self.campaign[i]),
            float(self.timestamp[i]),
        )

    def __iter__(self) -> Iterator[Record]:
        for i in range(len(self)):
            yield self.record(i)

    @classmethod
    def from_records(cls, records: Sequence[Record], hash_bits: int) -> "RecordSet":
        indptr = np.zeros(len(records) + 1, dtype=np.int64)
        for i, r in enumerate(records):
            indptr[i + 1] = indptr[i] + len(r.features)
        if records:
            indices = np.concatenate([r.features.indices for r in records]).astype(np.int64)
            data = np.concatenate([r.features.values for r in records]).astype(np.float64)
        else:
            indices, data = np.empty(0, dtype=np.int64), np.empty(0)
        X = sp.csr_matrix((data, indices, indptr), shape=(len(records), 1 << hash_bits))
        return cls(
            X,
            [r.y for r in records],
            [r.cost for r in records],
            [r.value for r in records],
            [r.weight for r in records],
            [r.campaign_id for r in records],
            [r.timestamp for r in records],
            hash_bits,
        )

    @classmethod
    def from_events(cls, events: Sequence[RawEvent], schema: DatasetSchema) -> "RecordSet":
        """Hash events; label is 1 iff a conversion is present (no attribution window)."""
        return cls(
            hash_events(events, schema),
            [1 if ev.converted else 0 for ev in events],
            campaign=[ev.campaign_id for ev in events],
            timestamp=[ev.click_timestamp for ev in events],
            hash_bits=schema.hash_bits,
        )

    @classmethod
    def concat(cls, parts: Sequence["RecordSet"]) -> "RecordSet":
        if not parts:
            raise ValueError("nothing to concatenate")
        return cls(
            sp.vstack([p.X for p in parts], format="csr"),
            np.concatenate([p.y for p in parts]),
            np.concatenate([p.cost for p in parts]),
            np.concatenate([p.value for p in parts]),
            np.concatenate([p.weight for p in parts]),
            np.concatenate([p.campaign for p in parts]),
            np.concatenate([p.timestamp for p in parts]),
            parts[0].hash_bits,
        )


def write_records(path: str | Path, records: RecordSet) -> None:
    """Write the versioned JSON-lines record format.

    First line is a header ``{"format": "wnll-records", "version": 1,
    "hash_bits": d, "n": N}``; each following line holds one record as
    ``{"i": [...], "x": [...], "y", "c", "v", "w", "campaign", "t"}``.
    Floats are written with ``repr`` precision so a read-back is exact.
    """
    X = records.X
    with _open(path, "wt") if str(path).endswith(".gz") else open(path, "w") as fh:
        header = {"format": RECORDS_FORMAT, "version": RECORDS_VERSION, "hash_bits": records.hash_bits, "n": len(records)}
        fh.write(json.dumps(header) + "\n")
        for i in range(len(records)):
            lo, hi = X.indptr[i], X.indptr[i + 1]
            row = {
                "i": X.indices[lo:hi].tolist(),
                "x": X.data[lo:hi].tolist(),
                "y": int(records.y[i]),
                "c": float(records.cost[i]),
                "v": float(records.value[i]),
                "w": float(records.weight[i]),
                "campaign": str(records.campaign[i]),
                "t": float(records.timestamp[i]),
            }
            fh.write(json.dumps(row) + "\n")


def read_records(path: str | Path) -> RecordSet:
    opener = (lambda: gzip.open(path, "rt")) if str(path).endswith(".gz") else (lambda: open(path))
    with opener() as fh:
        header = json.loads(fh.readline())
        if header.get("format") != RECORDS_FORMAT or header.get("version") != RECORDS_VERSION:
            raise DataError(f"{path}: not a {RECORDS_FORMAT} v{RECORDS_VERSION} file")
        recs = []
        for line in fh:
            row = json.loads(line)
            vec = SparseVector(np.array(row["i"], dtype=np.int64), np.array(row["x"], dtype=np.float64))
            recs.append(Record(vec, row["y"], row["c"], row["v"], row["w"], row["campaign"], row["t"]))
    return RecordSet.from_records(recs, header["hash_bits"])


# ---------------------------------------------------------------- campaign economics


def smooth_cr(clicks: int, sales: int, global_avg_cr: float) -> float:
    return (sales + global_avg_cr) / (clicks + 1)


class CampaignTable(dict):
    """campaign_id -> CampaignStats; unknown campaigns fall back to zero counts."""

    def __init__(self, stats=(), *, global_avg_cr: float):
        super().__init__(stats)
        self.global_avg_cr = global_avg_cr

    def __missing__(self, campaign_id):
        cr = smooth_cr(0, 0, self.global_avg_cr)
        return CampaignStats(0, 0, cr, 1.0 / cr)


def estimate_campaign_stats(reference: RecordSet, global_avg_cr: float) -> CampaignTable:
    """Per-campaign smoothed conversion rates over the reference window."""
    if not 0.0 < global_avg_cr < 1.0:
        raise ValueError("global_avg_cr must be in (0, 1)")
    if len(reference) == 0:
        raise EmptyWindow("reference window is empty")
    clicks = Counter(reference.campaign.tolist())
    sales = Counter(reference.campaign[reference.y == 1].tolist())
    table = CampaignTable(global_avg_cr=global_avg_cr)
    for cid, n in clicks.items():
        cr = smooth_cr(n, sales[cid], global_avg_cr)
        table[cid] = CampaignStats(n, sales[cid], cr, 1.0 / cr)
    return table


def global_conversion_rate(reference: RecordSet) -> float:
    if len(reference) == 0:
        raise EmptyWindow("reference window is empty")
    return float(reference.y.mean())


def assign_economics(record: Record, stats: CampaignTable) -> Record:
    """Unit cost and CPA = 1/SmoothCR of the record's campaign; weight reset to 1."""
    st = stats[record.campaign_id]
    return Record(record.features, record.y, 1.0, 1.0 / st.smooth_cr, 1.0, record.campaign_id, record.timestamp)


def assign_economics_batch(records: RecordSet, stats: CampaignTable) -> RecordSet:
    out = records.take(np.arange(len(records)))
    cache = {cid: stats[cid].smooth_cr for cid in set(records.campaign.tolist())}
    out.cost = np.ones(len(records))
    out.value = np.array([1.0 / cache[c] for c in records.campaign], dtype=np.float64)
    out.weight = np.ones(len(records))
    return out


# ---------------------------------------------------------------- time splits


@dataclass
class DaySplit:
    day_start: float
    train: RecordSet
    test: RecordSet


def _window_mask(t: np.ndarray, start: float, end: float) -> np.ndarray:
    return (t >= start) & (t < end)


def split_by_time(
    records: RecordSet,
    reference_window: tuple[float, float],
    test_window: tuple[float, float],
    *,
    train_days: int = 21,
    day: int = DAY,
) -> tuple[RecordSet, list[DaySplit]]:
    """Reference set plus one (train, test) pair per test day.

    Windows are half-open ``[start, end)``.  For the test day starting at
    ``D`` the training set is every record in ``[D - train_days*day, D)``.
    """
    ref_start, ref_end = reference_window
    test_start, test_end = test_window
    if ref_end > test_start:
        raise ValueError("reference window must precede the test window")
    t = records.timestamp
    reference = records.take(np.flatnonzero(_window_mask(t, ref_start, ref_end)))
    splits = []
    d = test_start
    while d < test_end:
        d_end = min(d + day, test_end)
        train_idx = np.flatnonzero(_window_mask(t, d - train_days * day, d))
        if len(train_idx) == 0:
            raise EmptyWindow(f"no training records before test day starting {d}")
        test_idx = np.flatnonzero(_window_mask(t, d, d_end))
        splits.append(DaySplit(d, records.take(train_idx), records.take(test_idx)))
        d = d_end
    return reference, splits
