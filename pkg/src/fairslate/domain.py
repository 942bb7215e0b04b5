"""Dataset-facing domain types: relevance scores, provider catalogs, arrival
schedules, slates, and run configuration.

Ids are opaque strings.  Every container maps them to dense integer indices
at construction time so the solver loops can use flat array indexing; the
index of an id is its first-appearance position in the source data.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "ParseError",
    "ValidationError",
    "position_weight",
    "position_weights",
    "PreferenceStore",
    "ProviderCatalog",
    "ArrivalSchedule",
    "Slate",
    "RunConfig",
    "Dataset",
    "ValidationReport",
    "load_scores",
    "load_catalog",
    "load_arrivals",
    "write_scores",
    "write_catalog",
    "write_arrivals",
    "validate_dataset",
]

FORECAST_METHODS = ("mean", "seasonal", "last")


class ParseError(ValueError):
    """Malformed input row.  Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class ValidationError(ValueError):
    """Well-formed input that violates a documented constraint."""


def position_weight(k: int) -> float:
    """Examination weight of rank ``k``: 1/log2(k+1).

    Strictly decreasing in k, equal to 1 at the top position.
    """
    if k != int(k) or int(k) < 1:
        raise ValueError(f"rank must be an integer >= 1, got {k!r}")
    return 1.0 / math.log2(int(k) + 1)


def position_weights(K: int) -> np.ndarray:
    """Vector (p(1), ..., p(K))."""
    if K != int(K) or int(K) < 1:
        raise ValueError(f"slate size must be an integer >= 1, got {K!r}")
    return 1.0 / np.log2(np.arange(2, int(K) + 2, dtype=np.float64))


def _float_repr(x: float) -> str:
    # repr() emits the shortest decimal string that round-trips the float64
    # exactly, never more than 17 significant digits.
    return repr(float(x))


class PreferenceStore:
    """Relevance scores s(u, i) in [0, 1] with sparse default 0.

    Lookups of unknown users, unknown items, or absent pairs return 0 and
    never raise.  ``duplicate_count`` records how many input rows were
    overwritten by a later row for the same (user, item) pair.
    """

    def __init__(
        self,
        users: Sequence[str],
        items: Sequence[str],
        matrix: np.ndarray,
        duplicate_count: int = 0,
    ):
        self.users: tuple[str, ...] = tuple(users)
        self.items: tuple[str, ...] = tuple(items)
        self.matrix = np.asarray(matrix, dtype=np.float64)
        if self.matrix.shape != (len(self.users), len(self.items)):
            raise ValidationError(
                f"matrix shape {self.matrix.shape} does not match "
                f"{len(self.users)} users x {len(self.items)} items"
            )
        if self.matrix.size and (self.matrix.min() < 0.0 or self.matrix.max() > 1.0):
            raise ValidationError("scores must lie in [0, 1]")
        self.duplicate_count = int(duplicate_count)
        self.user_index: dict[str, int] = {u: j for j, u in enumerate(self.users)}
        self.item_index: dict[str, int] = {i: j for j, i in enumerate(self.items)}
        if len(self.user_index) != len(self.users):
            raise ValidationError("duplicate user ids")
        if len(self.item_index) != len(self.items):
            raise ValidationError("duplicate item ids")

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, str, float]]) -> "PreferenceStore":
        users: list[str] = []
        items: list[str] = []
        uidx: dict[str, int] = {}
        iidx: dict[str, int] = {}
        entries: dict[tuple[int, int], float] = {}
        duplicates = 0
        for user, item, score in rows:
            s = float(score)
            if not (0.0 <= s <= 1.0) or math.isnan(s):
                raise ValidationError(f"score {s!r} for ({user!r}, {item!r}) outside [0, 1]")
            u = uidx.get(user)
            if u is None:
                u = uidx[user] = len(users)
                users.append(user)
            i = iidx.get(item)
            if i is None:
                i = iidx[item] = len(items)
                items.append(item)
            if (u, i) in entries:
                duplicates += 1
            entries[(u, i)] = s
        matrix = np.zeros((len(users), len(items)), dtype=np.float64)
        for (u, i), s in entries.items():
            matrix[u, i] = s
        return cls(users, items, matrix, duplicate_count=duplicates)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    def score(self, user: str, item: str) -> float:
        u = self.user_index.get(user)
        i = self.item_index.get(item)
        if u is None or i is None:
            return 0.0
        return float(self.matrix[u, i])

    def scores_for(self, user: str) -> np.ndarray:
        """Dense row of scores over ``self.items`` (zeros for unknown users)."""
        u = self.user_index.get(user)
        if u is None:
            return np.zeros(self.n_items, dtype=np.float64)
        return self.matrix[u]

    def iter_rows(self) -> Iterator[tuple[str, str, float]]:
        """Nonzero entries in (user-major, item-minor) index order."""
        for u, user in enumerate(self.users):
            row = self.matrix[u]
            for i in np.nonzero(row)[0]:
                yield user, self.items[i], float(row[i])

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, PreferenceStore)
            and self.users == other.users
            and self.items == other.items
            and np.array_equal(self.matrix, other.matrix)
        )


class ProviderCatalog:
    """Item ownership plus a per-provider merit weight.

    Merit defaults to catalog share |I_p| / |I| and can be overridden with
    any non-negative weights (e.g. summed relevance mass).  Every provider
    owns at least one item by construction.
    """

    def __init__(
        self,
        owner: Mapping[str, str],
        merit: Mapping[str, float] | None = None,
    ):
        if not owner:
            raise ValidationError("catalog is empty")
        self.items: tuple[str, ...] = tuple(owner.keys())
        self.owner: dict[str, str] = dict(owner)
        seen: dict[str, None] = {}
        for item in self.items:
            seen.setdefault(self.owner[item], None)
        self.providers: tuple[str, ...] = tuple(seen.keys())
        self.provider_index: dict[str, int] = {p: j for j, p in enumerate(self.providers)}
        self.merit_overridden = merit is not None
        if merit is None:
            counts = {p: 0 for p in self.providers}
            for item in self.items:
                counts[self.owner[item]] += 1
            total = len(self.items)
            self.merit = {p: counts[p] / total for p in self.providers}
        else:
            missing = [p for p in self.providers if p not in merit]
            if missing:
                raise ValidationError(f"merit override missing providers: {missing}")
            vals = {p: float(merit[p]) for p in self.providers}
            if any(v < 0.0 or math.isnan(v) for v in vals.values()):
                raise ValidationError("merit weights must be non-negative")
            if sum(vals.values()) <= 0.0:
                raise ValidationError("merit weights must not all be zero")
            self.merit = vals

    @classmethod
    def from_rows(
        cls,
        rows: Iterable[tuple[str, str]],
        merit: Mapping[str, float] | None = None,
    ) -> "ProviderCatalog":
        owner: dict[str, str] = {}
        for item, provider in rows:
            prev = owner.get(item)
            if prev is not None and prev != provider:
                raise ValidationError(
                    f"item {item!r} assigned to both {prev!r} and {provider!r}"
                )
            owner[item] = provider
        return cls(owner, merit=merit)

    @property
    def n_providers(self) -> int:
        return len(self.providers)

    def merit_shares(self) -> np.ndarray:
        """Merit normalized to a point on the provider simplex."""
        v = np.array([self.merit[p] for p in self.providers], dtype=np.float64)
        return v / v.sum()

    def owner_indices(self, items: Sequence[str]) -> np.ndarray:
        """Dense provider index for each item id; unknown items are an error."""
        out = np.empty(len(items), dtype=np.int64)
        for j, item in enumerate(items):
            p = self.owner.get(item)
            if p is None:
                raise ValidationError(f"item {item!r} has no provider")
            out[j] = self.provider_index[p]
        return out


@dataclass(frozen=True)
class ArrivalSchedule:
    """Chronological user arrivals tagged with a 1-based interval index."""

    arrivals: tuple[tuple[int, str], ...]
    interval_count: int

    def __post_init__(self):
        if self.interval_count < 1:
            raise ValidationError("interval_count must be >= 1")
        prev = 1
        for n, user in self.arrivals:
            if n < 1 or n > self.interval_count:
                raise ValidationError(f"interval {n} outside 1..{self.interval_count}")
            if n < prev:
                raise ValidationError("arrivals must be sorted by interval")
            prev = n

    @property
    def total(self) -> int:
        return len(self.arrivals)

    def traffic(self) -> dict[int, int]:
        """Arrival count r_n per interval (all intervals present, maybe 0)."""
        r = {n: 0 for n in range(1, self.interval_count + 1)}
        for n, _ in self.arrivals:
            r[n] += 1
        return r

    def users_by_interval(self) -> list[list[str]]:
        out: list[list[str]] = [[] for _ in range(self.interval_count)]
        for n, user in self.arrivals:
            out[n - 1].append(user)
        return out


@dataclass(frozen=True)
class Slate:
    """Ordered top-K recommendation for one user; items are distinct."""

    user: str
    entries: tuple[str, ...]
    K: int

    def __post_init__(self):
        if self.K != len(self.entries):
            raise ValidationError(f"slate declares K={self.K} but has {len(self.entries)} entries")
        if len(set(self.entries)) != len(self.entries):
            raise ValidationError("slate entries must be distinct")
        if self.K < 1:
            raise ValidationError("slate must contain at least one item")

    @classmethod
    def of(cls, user: str, entries: Sequence[str]) -> "Slate":
        return cls(user=user, entries=tuple(entries), K=len(entries))

    def position(self, item: str) -> int:
        """1-based rank sigma(i) of ``item`` in this slate."""
        try:
            return self.entries.index(item) + 1
        except ValueError:
            raise ValueError(f"item {item!r} not in slate") from None


@dataclass(frozen=True)
class RunConfig:
    """Session hyperparameters.  Construction validates every range."""

    K: int = 10
    N: int = 8
    lam: float = 0.5          # fairness/accuracy trade-off in [0, 1]
    delta: float = 1.0        # regret steepness
    alpha_risk: float = 1.0   # utility curvature (power), fixed 1.0 by default
    alpha_demand: float = 1.0 # demand inflation factor
    beta_min: float = 0.9     # share of merit-proportional exposure guaranteed
    eta: float = 0.05         # dual step size
    k_steep: float = 10.0     # fairness membership steepness
    g0: float = 1.0           # unacceptable-unfairness variance level
    forecast_method: str = "mean"
    seed: int = 0

    def __post_init__(self):
        if self.K != int(self.K) or self.K < 1:
            raise ValidationError("K must be an integer >= 1")
        if self.N != int(self.N) or self.N < 1:
            raise ValidationError("N must be an integer >= 1")
        if not (0.0 <= self.lam <= 1.0):
            raise ValidationError("lambda must lie in [0, 1]")
        if not (self.delta > 0.0):
            raise ValidationError("delta must be > 0")
        if not (0.0 < self.alpha_risk <= 1.0):
            raise ValidationError("alpha_risk must lie in (0, 1]")
        if not (self.alpha_demand > 0.0):
            raise ValidationError("alpha_demand must be > 0")
        if not (0.0 <= self.beta_min <= 1.0):
            raise ValidationError("beta_min must lie in [0, 1]")
        if not (self.eta > 0.0):
            raise ValidationError("eta must be > 0")
        if not (self.k_steep > 0.0):
            raise ValidationError("k_steep must be > 0")
        if not (self.g0 > 0.0):
            raise ValidationError("g0 must be > 0")
        if self.forecast_method not in FORECAST_METHODS:
            raise ValidationError(
                f"forecast_method must be one of {FORECAST_METHODS}, got {self.forecast_method!r}"
            )
        if self.seed != int(self.seed):
            raise ValidationError("seed must be an integer")

    # Config files spell the trade-off key "lambda"; the attribute cannot.
    _KEY_ALIASES = {"lambda": "lam"}

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, object]) -> "RunConfig":
        kwargs: dict[str, object] = {}
        names = {f.name for f in fields(cls)}
        for key, raw in mapping.items():
            name = cls._KEY_ALIASES.get(key, key)
            if name not in names:
                raise ParseError(f"unknown config key {key!r}")
            kwargs[name] = raw
        conv: dict[str, object] = {}
        for f in fields(cls):
            if f.name not in kwargs:
                continue
            raw = kwargs[f.name]
            try:
                if f.name in ("K", "N", "seed"):
                    conv[f.name] = int(raw)
                elif f.name == "forecast_method":
                    conv[f.name] = str(raw)
                else:
                    conv[f.name] = float(raw)
            except (TypeError, ValueError):
                raise ParseError(f"config key {f.name!r}: cannot parse {raw!r}") from None
        return cls(**conv)

    def to_mapping(self) -> dict[str, object]:
        out: dict[str, object] = {}
        for f in fields(self):
            key = "lambda" if f.name == "lam" else f.name
            out[key] = getattr(self, f.name)
        return out


@dataclass(frozen=True)
class Dataset:
    """The three inputs a session consumes."""

    store: PreferenceStore
    catalog: ProviderCatalog
    schedule: ArrivalSchedule


@dataclass(frozen=True)
class ValidationReport:
    missing_users: tuple[str, ...]
    unowned_items: tuple[str, ...]
    traffic: dict[int, int]

    @property
    def passed(self) -> bool:
        return not self.missing_users and not self.unowned_items

    def summary(self) -> str:
        if self.passed:
            return "dataset ok"
        parts = []
        if self.missing_users:
            parts.append(f"{len(self.missing_users)} arrival users missing from scores "
                         f"(first: {self.missing_users[0]!r})")
        if self.unowned_items:
            parts.append(f"{len(self.unowned_items)} items without a provider "
                         f"(first: {self.unowned_items[0]!r})")
        return "; ".join(parts)


def validate_dataset(
    store: PreferenceStore,
    catalog: ProviderCatalog,
    schedule: ArrivalSchedule,
) -> ValidationReport:
    """Cross-check the three inputs; returns findings instead of raising."""
    missing = []
    seen: set[str] = set()
    for _, user in schedule.arrivals:
        if user not in store.user_index and user not in seen:
            missing.append(user)
            seen.add(user)
    unowned = [item for item in store.items if item not in catalog.owner]
    return ValidationReport(
        missing_users=tuple(missing),
        unowned_items=tuple(unowned),
        traffic=schedule.traffic(),
    )


# ---------------------------------------------------------------------------
# File ingestion.  CSV with a header, or JSONL with the same field names.
# ---------------------------------------------------------------------------

def _detect_format(path: str | Path, format: str | None) -> str:
    if format is not None:
        if format not in ("csv", "jsonl"):
            raise ValueError(f"format must be 'csv' or 'jsonl', got {format!r}")
        return format
    return "jsonl" if str(path).endswith((".jsonl", ".ndjson")) else "csv"


def _iter_records(
    path: str | Path, fmt: str, columns: tuple[str, ...]
) -> Iterator[tuple[int, dict[str, str]]]:
    """Yields (line_number, record) with records as plain string maps."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                return
            header = [h.strip() for h in header]
            if header != list(columns):
                raise ParseError(
                    f"expected header {','.join(columns)}, got {','.join(header)}", line=1
                )
            for ln, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(columns):
                    raise ParseError(
                        f"expected {len(columns)} fields, got {len(row)}", line=ln
                    )
                yield ln, dict(zip(columns, row))
        else:
            for ln, raw in enumerate(fh, start=1):
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    obj = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"invalid JSON: {exc.msg}", line=ln) from None
                if not isinstance(obj, dict):
                    raise ParseError("expected a JSON object", line=ln)
                missing = [c for c in columns if c not in obj]
                if missing:
                    raise ParseError(f"missing fields {missing}", line=ln)
                yield ln, {c: obj[c] for c in columns}


def load_scores(path: str | Path, format: str | None = None) -> PreferenceStore:
    """Reads user,item,score triples.

    Duplicate (user, item) pairs resolve last-write-wins and are tallied in
    ``duplicate_count``.  Scores outside [0, 1] raise ValidationError naming
    the offending line; unparsable rows raise ParseError.
    """
    fmt = _detect_format(path, format)
    users: list[str] = []
    items: list[str] = []
    uidx: dict[str, int] = {}
    iidx: dict[str, int] = {}
    entries: dict[tuple[int, int], float] = {}
    duplicates = 0
    for ln, rec in _iter_records(path, fmt, ("user_id", "item_id", "score")):
        user = str(rec["user_id"])
        item = str(rec["item_id"])
        try:
            s = float(rec["score"])
        except (TypeError, ValueError):
            raise ParseError(f"score {rec['score']!r} is not a number", line=ln) from None
        if math.isnan(s) or not (0.0 <= s <= 1.0):
            raise ValidationError(f"line {ln}: score {s!r} outside [0, 1]")
        u = uidx.get(user)
        if u is None:
            u = uidx[user] = len(users)
            users.append(user)
        i = iidx.get(item)
        if i is None:
            i = iidx[item] = len(items)
            items.append(item)
        if (u, i) in entries:
            duplicates += 1
        entries[(u, i)] = s
    matrix = np.zeros((len(users), len(items)), dtype=np.float64)
    for (u, i), s in entries.items():
        matrix[u, i] = s
    return PreferenceStore(users, items, matrix, duplicate_count=duplicates)


def load_catalog(path: str | Path, format: str | None = None) -> ProviderCatalog:
    """Reads item,provider pairs; conflicting reassignment is an error.

    An optional per-provider merit override may ride along as a third CSV
    column / JSONL field named "merit"; it must be constant per provider.
    """
    fmt = _detect_format(path, format)
    owner: dict[str, str] = {}
    merit: dict[str, float] = {}
    has_merit: bool | None = None

    with open(path, "r", encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise ValidationError("catalog is empty") from None
            if header == ["item_id", "provider_id"]:
                has_merit = False
            elif header == ["item_id", "provider_id", "merit"]:
                has_merit = True
            else:
                raise ParseError(
                    f"expected header item_id,provider_id[,merit], got {','.join(header)}",
                    line=1,
                )
            rows: Iterator[tuple[int, list[str]]] = (
                (ln, row) for ln, row in enumerate(reader, start=2) if row
            )
            for ln, row in rows:
                if len(row) != (3 if has_merit else 2):
                    raise ParseError(f"expected {3 if has_merit else 2} fields", line=ln)
                item, provider = str(row[0]), str(row[1])
                _note_owner(owner, item, provider, ln)
                if has_merit:
                    _note_merit(merit, provider, row[2], ln)
        else:
            for ln, raw in enumerate(fh, start=1):
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    obj = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"invalid JSON: {exc.msg}", line=ln) from None
                if "item_id" not in obj or "provider_id" not in obj:
                    raise ParseError("missing fields ['item_id', 'provider_id']", line=ln)
                item, provider = str(obj["item_id"]), str(obj["provider_id"])
                _note_owner(owner, item, provider, ln)
                if "merit" in obj:
                    has_merit = True
                    _note_merit(merit, provider, obj["merit"], ln)

    return ProviderCatalog(owner, merit=merit if merit else None)


def _note_owner(owner: dict[str, str], item: str, provider: str, ln: int) -> None:
    prev = owner.get(item)
    if prev is not None and prev != provider:
        raise ValidationError(
            f"line {ln}: item {item!r} assigned to both {prev!r} and {provider!r}"
        )
    owner[item] = provider


def _note_merit(merit: dict[str, float], provider: str, raw: object, ln: int) -> None:
    try:
        v = float(raw)  # type: ignore[arg-type]
    except (TypeError, ValueError):
        raise ParseError(f"merit {raw!r} is not a number", line=ln) from None
    prev = merit.get(provider)
    if prev is not None and prev != v:
        raise ValidationError(f"line {ln}: provider {provider!r} has conflicting merit values")
    merit[provider] = v


def load_arrivals(
    path: str | Path,
    format: str | None = None,
    interval_count: int | None = None,
) -> ArrivalSchedule:
    """Reads interval,user pairs.  Intervals must be non-decreasing."""
    fmt = _detect_format(path, format)
    arrivals: list[tuple[int, str]] = []
    max_n = 0
    for ln, rec in _iter_records(path, fmt, ("interval", "user_id")):
        try:
            n = int(rec["interval"])
        except (TypeError, ValueError):
            raise ParseError(f"interval {rec['interval']!r} is not an integer", line=ln) from None
        if n < 1:
            raise ValidationError(f"line {ln}: interval must be >= 1")
        arrivals.append((n, str(rec["user_id"])))
        max_n = max(max_n, n)
    n_intervals = interval_count if interval_count is not None else max(max_n, 1)
    return ArrivalSchedule(arrivals=tuple(arrivals), interval_count=n_intervals)


def write_scores(store: PreferenceStore, path: str | Path, include_zeros: bool = False) -> None:
    """CSV dump that round-trips bit-exactly through load_scores.

    Zero entries are omitted by default (zero is the lookup default anyway);
    ``include_zeros`` writes the full dense grid so the user and item
    universes survive even when some rows are entirely zero.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "item_id", "score"])
        if include_zeros:
            for u, user in enumerate(store.users):
                row = store.matrix[u]
                for i, item in enumerate(store.items):
                    w.writerow([user, item, _float_repr(float(row[i]))])
        else:
            for user, item, s in store.iter_rows():
                w.writerow([user, item, _float_repr(s)])


def write_catalog(catalog: ProviderCatalog, path: str | Path) -> None:
    """The merit column appears only when the catalog carries an override."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if catalog.merit_overridden:
            w.writerow(["item_id", "provider_id", "merit"])
            for item in catalog.items:
                p = catalog.owner[item]
                w.writerow([item, p, _float_repr(catalog.merit[p])])
        else:
            w.writerow(["item_id", "provider_id"])
            for item in catalog.items:
                w.writerow([item, catalog.owner[item]])


def write_arrivals(schedule: ArrivalSchedule, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "user_id"])
        for n, user in schedule.arrivals:
            w.writerow([n, user])
