"""Similar-property sets and price-polarity labels."""
from __future__ import annotations

import bisect
import csv
import datetime as dt
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .corpus import PropertyRecord

log = logging.getLogger(__name__)

WINDOW_DAYS = 90
MIN_SIMILAR = 6


class SimilarityKey(NamedTuple):
    neighbourhood: str
    age: str
    property_type: str


def similarity_key(rec: PropertyRecord) -> SimilarityKey:
    return SimilarityKey(rec.neighbourhood, rec.age, rec.property_type)


@dataclass(frozen=True)
class LabeledProperty:
    record_id: str
    price_per_area: float
    similar_count: int
    similar_mean_price_per_area: float
    polarity: int
    price_diff_pct: float


def in_window(candidate: dt.date, reference: dt.date, days: int = WINDOW_DAYS) -> bool:
    """True when ``candidate`` falls in ``[reference - days, reference)``."""
    return reference - dt.timedelta(days=days) <= candidate < reference


def similar_set(p: PropertyRecord, corpus: Sequence[PropertyRecord], window_days: int = WINDOW_DAYS) -> list[str]:
    key = similarity_key(p)
    return [
        q.id for q in corpus
        if q.id != p.id and q.area > 0 and similarity_key(q) == key
        and in_window(q.publish_date, p.publish_date, window_days)
    ]


def _polarity_from_values(ppa: float, similar_ppa: Sequence[float]) -> tuple[int, float, float]:
    n = len(similar_ppa)
    mean = math.fsum(similar_ppa) / n
    # exact sign of sum(similar) - n*ppa: fsum is correctly rounded, so its sign is exact
    excess = math.fsum(list(similar_ppa) + [-ppa] * n)
    polarity = 1 if excess < 0 else 0
    if excess == 0:
        diff_pct = 100.0
    else:
        diff_pct = ppa / mean * 100.0
        # keep diff_pct > 100 <=> polarity == 1 under rounding of a near-tie
        if polarity == 1 and diff_pct <= 100.0:
            diff_pct = math.nextafter(100.0, math.inf)
        elif polarity == 0 and diff_pct >= 100.0:
            diff_pct = math.nextafter(100.0, -math.inf)
    return polarity, mean, diff_pct


def polarity_label(p: PropertyRecord, similar: Sequence[PropertyRecord]) -> tuple[int, float, float]:
    """``(polarity, similar mean price per m2, price difference percentage)``."""
    if not similar:
        raise ValueError("similar set is empty")
    if p.area <= 0 or any(q.area <= 0 for q in similar):
        raise ValueError("areas must be positive")
    return _polarity_from_values(p.price_per_area, [q.price_per_area for q in similar])


@dataclass
class LabelingReport:
    labeled: list[LabeledProperty]
    dropped: Counter

    @property
    def n_dropped(self) -> int:
        return sum(self.dropped.values())


def build_labeled_dataset(corpus: Sequence[PropertyRecord], min_similar: int = MIN_SIMILAR,
                          window_days: int = WINDOW_DAYS) -> LabelingReport:
    """Label every record with at least ``min_similar`` similar properties.

    Single pass: dropping a record never shrinks another record's similar set.
    """
    groups: dict[SimilarityKey, list[int]] = defaultdict(list)
    for i, rec in enumerate(corpus):
        if rec.area > 0:
            groups[similarity_key(rec)].append(i)

    # per group, records sorted by date; a window is a contiguous slice
    group_dates: dict[SimilarityKey, list[dt.date]] = {}
    group_ppa: dict[SimilarityKey, list[float]] = {}
    for key, idx in groups.items():
        idx.sort(key=lambda i: (corpus[i].publish_date, i))
        group_dates[key] = [corpus[i].publish_date for i in idx]
        group_ppa[key] = [corpus[i].price_per_area for i in idx]

    labeled = []
    dropped: Counter = Counter()
    delta = dt.timedelta(days=window_days)
    for rec in corpus:
        if rec.area <= 0:
            dropped["non-positive area"] += 1
            continue
        key = similarity_key(rec)
        dates = group_dates[key]
        lo = bisect.bisect_left(dates, rec.publish_date - delta)
        hi = bisect.bisect_left(dates, rec.publish_date)
        count = hi - lo
        if count < min_similar:
            dropped[f"fewer than {min_similar} similar properties"] += 1
            continue
        polarity, mean, diff = _polarity_from_values(rec.price_per_area, group_ppa[key][lo:hi])
        labeled.append(LabeledProperty(rec.id, rec.price_per_area, count, mean, polarity, diff))
    if dropped:
        log.info("labeling dropped %d of %d records: %s", sum(dropped.values()), len(corpus), dict(dropped))
    return LabelingReport(labeled, dropped)


CSV_COLUMNS = ("id", "price_per_area", "similar_count", "similar_mean", "polarity", "price_diff_pct")


def write_labeled_csv(labeled: Sequence[LabeledProperty], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for lp in labeled:
        w.writerow([lp.record_id, repr(lp.price_per_area), lp.similar_count,
                    repr(lp.similar_mean_price_per_area), lp.polarity, repr(lp.price_diff_pct)])


def read_labeled_csv(fh) -> list[LabeledProperty]:
    rows = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(rows)
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected labeled CSV header {reader.fieldnames}")
    return [
        LabeledProperty(r["id"], float(r["price_per_area"]), int(r["similar_count"]),
                        float(r["similar_mean"]), int(r["polarity"]), float(r["price_diff_pct"]))
        for r in reader
    ]
