"""Listing records, JSONL ingestion, feature encoding and seeded splits."""
from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

REQUIRED_KEYS = ("id", "price", "area", "publish_date", "neighbourhood", "age",
                 "property_type", "description")
KNOWN_KEYS = frozenset(REQUIRED_KEYS + ("features",))

NUMERIC = "numeric"
CATEGORICAL = "categorical"
BOOLEAN = "boolean"


class CorpusError(ValueError):
    """Raised for unreadable input or, in strict mode, the first malformed line."""


class _Missing:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "MISSING"

    def __bool__(self):
        return False

    def __reduce__(self):
        return (_Missing, ())


#: Sentinel for an absent or null feature value.  Never equal to 0 or "".
MISSING = _Missing()


@dataclass(frozen=True)
class PropertyRecord:
    id: str
    price: float
    area: float
    publish_date: dt.date
    neighbourhood: str
    age: str
    property_type: str
    description: str
    features: dict[str, Any] = field(default_factory=dict)

    @property
    def price_per_area(self) -> float:
        return self.price / self.area

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.neighbourhood, self.age, self.property_type)

    def feature(self, name: str):
        """Feature value, or ``MISSING`` when absent or null."""
        return self.features.get(name, MISSING)

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "price": self.price,
            "area": self.area,
            "publish_date": self.publish_date.isoformat(),
            "neighbourhood": self.neighbourhood,
            "age": self.age,
            "property_type": self.property_type,
            "description": self.description,
        }
        if self.features:
            out["features"] = {k: (None if v is MISSING else v) for k, v in self.features.items()}
        return out


@dataclass(frozen=True)
class Rejection:
    line: int
    reason: str

    def __str__(self):
        return f"line {self.line}: {self.reason}"


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def record_from_json(obj: Any) -> PropertyRecord:
    """Validate one decoded JSON object; raises ``ValueError`` with the reason."""
    if not isinstance(obj, dict):
        raise ValueError("record is not a JSON object")
    for key in REQUIRED_KEYS:
        if key not in obj:
            raise ValueError(f"missing key '{key}'")
    unknown = sorted(set(obj) - KNOWN_KEYS)
    if unknown:
        log.warning("record %r: ignoring unknown keys %s", obj.get("id"), unknown)

    rid = obj["id"]
    if not isinstance(rid, str) or not rid:
        raise ValueError("id must be a non-empty string")
    price, area = obj["price"], obj["area"]
    if not _is_number(price) or not math.isfinite(price):
        raise ValueError("price is not a finite number")
    if price <= 0:
        raise ValueError("non-positive price")
    if not _is_number(area) or not math.isfinite(area):
        raise ValueError("area is not a finite number")
    if area <= 0:
        raise ValueError("non-positive area")
    date_raw = obj["publish_date"]
    if not isinstance(date_raw, str):
        raise ValueError("invalid publish_date")
    try:
        # time-of-day, if present, is ignored
        date = dt.date.fromisoformat(date_raw[:10])
    except ValueError:
        raise ValueError(f"invalid publish_date {date_raw!r}") from None
    for key in ("neighbourhood", "age", "property_type"):
        if not isinstance(obj[key], str) or not obj[key].strip():
            raise ValueError(f"empty {key}")
    if not isinstance(obj["description"], str):
        raise ValueError("description must be a string")

    feats_raw = obj.get("features", {})
    if feats_raw is None:
        feats_raw = {}
    if not isinstance(feats_raw, dict):
        raise ValueError("features must be an object")
    feats = {}
    for name, value in feats_raw.items():
        if value is None:
            feats[name] = MISSING
        elif isinstance(value, (bool, str)) or (_is_number(value) and math.isfinite(value)):
            feats[name] = value
        else:
            raise ValueError(f"feature '{name}' has unsupported value {value!r}")

    return PropertyRecord(
        id=rid,
        price=float(price),
        area=float(area),
        publish_date=date,
        neighbourhood=obj["neighbourhood"],
        age=obj["age"],
        property_type=obj["property_type"],
        description=obj["description"],
        features=feats,
    )


def parse_records(path, schema_mode: str = "lenient") -> tuple[list[PropertyRecord], list[Rejection]]:
    """Read a JSONL listing file.

    In ``strict`` mode the first malformed line raises :class:`CorpusError`;
    in ``lenient`` mode malformed lines are collected as rejections.
    """
    if schema_mode not in ("strict", "lenient"):
        raise ValueError(f"schema_mode must be 'strict' or 'lenient', got {schema_mode!r}")
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc

    records: list[PropertyRecord] = []
    rejections: list[Rejection] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"invalid JSON ({exc.msg})") from None
            rec = record_from_json(obj)
            if rec.id in seen:
                raise ValueError(f"duplicate id {rec.id!r}")
        except ValueError as exc:
            rej = Rejection(lineno, str(exc))
            if schema_mode == "strict":
                raise CorpusError(f"{path}: {rej}") from None
            rejections.append(rej)
            continue
        seen.add(rec.id)
        records.append(rec)
    return records, rejections


def write_records(records: Iterable[PropertyRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


# -- schema and encoding -----------------------------------------------------

def _as_number(value):
    """Numeric view of a feature value, or None when it has none."""
    if isinstance(value, bool):
        return None
    if _is_number(value):
        return float(value)
    if isinstance(value, str):
        try:
            x = float(value.strip())
        except ValueError:
            return None
        return x if math.isfinite(x) else None
    return None


_TRUE = frozenset({"true", "si", "sí", "yes", "1"})
_FALSE = frozenset({"false", "no", "0"})


def _as_bool(value):
    if isinstance(value, bool):
        return value
    if _is_number(value):
        return value != 0
    if isinstance(value, str):
        v = value.strip().lower()
        if v in _TRUE:
            return True
        if v in _FALSE:
            return False
    return None


def category_string(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if _is_number(value):
        return format(float(value), "g")
    return str(value)


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature list; categorical features carry their sorted vocabulary."""

    features: tuple[tuple[str, str], ...]
    categories: dict[str, tuple[str, ...]] = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.features]

    def kind(self, name: str) -> str:
        return dict(self.features)[name]

    def columns(self) -> list[str]:
        cols = []
        for name, kind in self.features:
            if kind == CATEGORICAL:
                cols.extend(f"{name}={cat}" for cat in self.categories[name])
            else:
                cols.append(name)
        return cols

    @property
    def n_columns(self) -> int:
        return len(self.columns())

    def to_json(self) -> dict:
        return {
            "features": [list(f) for f in self.features],
            "categories": {k: list(v) for k, v in sorted(self.categories.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureSchema":
        return cls(
            features=tuple((str(n), str(k)) for n, k in obj["features"]),
            categories={k: tuple(v) for k, v in obj.get("categories", {}).items()},
        )

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def build_schema(records: Sequence[PropertyRecord]) -> FeatureSchema:
    """Union of feature names, kinds by majority vote of non-missing values.

    Features are ordered by first appearance.  A feature mixing numbers with
    strings that do not parse as numbers is made categorical, with a warning.
    """
    if not records:
        raise ValueError("cannot build a schema from an empty record list")
    votes: dict[str, Counter] = {}
    for rec in records:
        for name, value in rec.features.items():
            tally = votes.setdefault(name, Counter())
            if value is MISSING:
                continue
            if isinstance(value, bool):
                tally[BOOLEAN] += 1
            elif _as_number(value) is not None:
                tally[NUMERIC] += 1
            else:
                tally[CATEGORICAL] += 1

    features = []
    categories = {}
    for name, tally in votes.items():
        if not tally:
            kind = NUMERIC
        elif tally[CATEGORICAL] and (tally[NUMERIC] or tally[BOOLEAN]):
            log.warning("feature %r mixes numeric and non-numeric values; treating as categorical", name)
            kind = CATEGORICAL
        else:
            # ties resolve boolean > numeric > categorical
            kind = max((BOOLEAN, NUMERIC, CATEGORICAL), key=lambda k: tally[k])
        features.append((name, kind))
        if kind == CATEGORICAL:
            cats = {category_string(r.feature(name)) for r in records if r.feature(name) is not MISSING}
            categories[name] = tuple(sorted(cats))
    return FeatureSchema(tuple(features), categories)


@dataclass
class EncodedMatrix:
    """Dense row-major values plus a per-cell missing mask.

    Cells with ``missing_mask`` set hold NaN; consumers must not read them.
    """

    values: np.ndarray
    missing_mask: np.ndarray
    columns: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.missing_mask = np.ascontiguousarray(self.missing_mask, dtype=np.bool_)
        if self.values.ndim != 2 or self.values.shape != self.missing_mask.shape:
            raise ValueError("values and missing_mask must be 2-D arrays of the same shape")
        if not self.columns:
            self.columns = [f"f{j}" for j in range(self.values.shape[1])]
        if len(self.columns) != self.values.shape[1]:
            raise ValueError("column names do not match the column count")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def take(self, rows) -> "EncodedMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        return EncodedMatrix(self.values[rows], self.missing_mask[rows], list(self.columns))

    def hstack(self, other: "EncodedMatrix") -> "EncodedMatrix":
        if other.n_rows != self.n_rows:
            raise ValueError(f"row mismatch: {self.n_rows} vs {other.n_rows}")
        return EncodedMatrix(
            np.hstack([self.values, other.values]),
            np.hstack([self.missing_mask, other.missing_mask]),
            self.columns + other.columns,
        )

    @classmethod
    def dense(cls, values, columns=None) -> "EncodedMatrix":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.zeros(values.shape, dtype=np.bool_), list(columns or []))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, values=self.values, missing_mask=self.missing_mask,
                     columns=np.array(self.columns, dtype=str))

    @classmethod
    def load(cls, path) -> "EncodedMatrix":
        with np.load(path, allow_pickle=False) as z:
            return cls(z["values"], z["missing_mask"], [str(c) for c in z["columns"]])


def encode_features(schema: FeatureSchema, records: Sequence[PropertyRecord]) -> EncodedMatrix:
    cols = schema.columns()
    values = np.full((len(records), len(cols)), np.nan)
    mask = np.ones((len(records), len(cols)), dtype=np.bool_)
    for i, rec in enumerate(records):
        j = 0
        for name, kind in schema.features:
            width = len(schema.categories[name]) if kind == CATEGORICAL else 1
            raw = rec.feature(name)
            if raw is not MISSING:
                if kind == NUMERIC:
                    x = _as_number(raw)
                    if x is None:
                        log.info("record %s: %r is not numeric for %r; marked missing", rec.id, raw, name)
                    else:
                        values[i, j] = x
                        mask[i, j] = False
                elif kind == BOOLEAN:
                    b = _as_bool(raw)
                    if b is None:
                        log.info("record %s: %r is not boolean for %r; marked missing", rec.id, raw, name)
                    else:
                        values[i, j] = 1.0 if b else 0.0
                        mask[i, j] = False
                else:
                    vocab = schema.categories[name]
                    cat = category_string(raw)
                    try:
                        hot = vocab.index(cat)
                    except ValueError:
                        log.info("record %s: unseen category %r for %r; marked missing", rec.id, cat, name)
                    else:
                        values[i, j:j + width] = 0.0
                        values[i, j + hot] = 1.0
                        mask[i, j:j + width] = False
            j += width
    return EncodedMatrix(values, mask, cols)


def split_train_test(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded random partition of ``range(n)``; train size is round-half-up of ``n*fraction``."""
    if n < 2:
        raise ValueError("need at least 2 rows to split")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n_train = int(math.floor(n * train_fraction + 0.5))
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])
