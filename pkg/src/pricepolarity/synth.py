"""Synthetic listing corpus with a planted, partly text-only price signal.

Price per m2 is multiplicative: a base for the (neighbourhood, type, age)
sub-market times one multiplier per amenity times lognormal noise.  Some
amenities surface as listing features (randomly blanked), some only in the
description, and the description mentions each amenity the listing has with
probability ``text_signal``.  Description length is drawn independently of
price.
"""
from __future__ import annotations

import datetime as dt
import json
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import MISSING, PropertyRecord

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Amenity:
    name: str
    multiplier: float
    prevalence: float
    phrases: tuple[str, ...]
    feature: str | None = None  # listing field exposing it, None for text-only


DEFAULT_AMENITIES = (
    Amenity("piscina", 1.35, 0.20, ("con piscina", "piscina climatizada", "piscina comunal"), "piscina"),
    Amenity("terraza", 1.15, 0.30, ("amplia terraza", "terraza", "terraza con vista"), "terraza"),
    Amenity("gimnasio", 1.10, 0.25, ("gimnasio", "gimnasio dotado"), "gimnasio"),
    Amenity("vigilancia", 1.08, 0.50, ("vigilancia 24 horas", "seguridad privada"), "vigilancia_privada"),
    Amenity("chimenea", 1.08, 0.25, ("chimenea", "chimenea en la sala"), "chimenea"),
    Amenity("remodelado", 1.12, 0.20, ("totalmente remodelado", "remodelado", "recien remodelada"), None),
    Amenity("club_house", 1.10, 0.15, ("club house", "club social"), None),
    Amenity("estrenar", 1.12, 0.15, ("para estrenar", "nuevo para estrenar"), None),
    Amenity("vista", 1.08, 0.25, ("vista panoramica", "espectacular vista"), None),
    Amenity("bbq", 1.04, 0.20, ("zona bbq", "bbq"), None),
    Amenity("oportunidad", 0.90, 0.15, ("oportunidad", "gran oportunidad venta urgente"), None),
    Amenity("para_remodelar", 0.90, 0.12, ("para remodelar", "requiere remodelacion"), None),
    Amenity("interior", 0.93, 0.30, ("apartamento interior", "interior"), None),
)

DEFAULT_NEIGHBOURHOODS = (
    "Chapinero", "Usaquen", "Suba", "Engativa", "Teusaquillo", "Kennedy", "Fontibon",
    "Cedritos", "Chico", "Salitre", "Modelia", "Colina",
)

_OPENERS = (
    "Vendo {tipo} en {barrio}.", "Hermoso {tipo} ubicado en {barrio}.",
    "Excelente {tipo} en el sector de {barrio}.", "Se vende {tipo} en {barrio}.",
    "{tipo} en venta, barrio {barrio}.",
)
_FILLERS = (
    "Cerca de transporte publico.", "Excelente ubicacion.", "Sector tranquilo y residencial.",
    "Cerca a centros comerciales y colegios.", "Zonas verdes y parque infantil.",
    "Facil acceso a vias principales.", "Buena iluminacion natural.", "Cocina integral.",
    "Pisos en buen estado.", "Conjunto cerrado.", "Parqueadero de visitantes.",
    "Cerca de supermercados.", "Area social amplia.", "Documentos al dia.",
    "Se reciben creditos hipotecarios.", "Informacion con el asesor.",
    "Ambiente familiar.", "Calle tranquila.", "Buena distribucion de espacios.",
    "Excelente para vivir.",
)
_FLOORS = ("madera", "baldosa", "alfombra", "porcelanato")
_STOVES = ("gas", "electrica")


@dataclass(frozen=True)
class SynthConfig:
    n_properties: int = 5000
    n_neighbourhoods: int = 12
    property_types: tuple[str, ...] = ("apartamento", "casa")
    ages: tuple[str, ...] = ("0-10", "10-20", "20+")
    start_date: dt.date = dt.date(2017, 1, 1)
    n_days: int = 365
    base_price_range: tuple[float, float] = (2.5e6, 9.0e6)  # COP per m2
    amenities: tuple[Amenity, ...] = DEFAULT_AMENITIES
    noise_std: float = 0.08  # std of log-price noise
    text_signal: float = 0.85
    missing_rate: float = 0.2
    filler_range: tuple[int, int] = (2, 12)  # neutral sentences per description, [lo, hi)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.text_signal <= 1.0:
            raise ValueError("text_signal must lie in [0, 1]")
        if not 0.0 <= self.missing_rate <= 1.0:
            raise ValueError("missing_rate must lie in [0, 1]")
        if any(a.multiplier <= 0 for a in self.amenities):
            raise ValueError("amenity multipliers must be positive")
        if self.n_properties < 1 or self.n_neighbourhoods < 1 or self.n_days < 1:
            raise ValueError("sizes must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    @property
    def neighbourhoods(self) -> tuple[str, ...]:
        names = list(DEFAULT_NEIGHBOURHOODS)
        while len(names) < self.n_neighbourhoods:
            names.append(f"Barrio {len(names) + 1}")
        return tuple(names[: self.n_neighbourhoods])


@dataclass(frozen=True)
class GroundTruth:
    id: str
    amenities: tuple[str, ...]
    log_noise: float
    clean_price_per_area: float  # price per m2 without noise

    def to_json(self) -> dict:
        return {"id": self.id, "amenities": list(self.amenities), "log_noise": self.log_noise,
                "clean_price_per_area": self.clean_price_per_area}

    @classmethod
    def from_json(cls, obj) -> "GroundTruth":
        return cls(obj["id"], tuple(obj["amenities"]), float(obj["log_noise"]),
                   float(obj["clean_price_per_area"]))


def generate_corpus(config: SynthConfig = SynthConfig()) -> tuple[list[PropertyRecord], list[GroundTruth]]:
    rng = np.random.default_rng(config.seed)
    hoods = config.neighbourhoods
    n_groups = len(hoods) * len(config.property_types) * len(config.ages)
    expected_window = config.n_properties / n_groups * min(90, config.n_days) / config.n_days
    if expected_window < 6:
        log.warning("synthetic config averages %.1f similar listings per window; most records "
                    "will fall below the 6-similar threshold", expected_window)

    lo, hi = config.base_price_range
    hood_base = {h: float(rng.uniform(lo, hi)) for h in hoods}
    hood_estrato = {h: int(rng.integers(2, 7)) for h in hoods}
    type_factor = {t: float(rng.uniform(0.85, 1.15)) for t in config.property_types}
    age_factor = {a: 1.0 - 0.08 * i for i, a in enumerate(config.ages)}

    records, truth = [], []
    for i in range(config.n_properties):
        hood = hoods[int(rng.integers(len(hoods)))]
        ptype = config.property_types[int(rng.integers(len(config.property_types)))]
        age = config.ages[int(rng.integers(len(config.ages)))]
        date = config.start_date + dt.timedelta(days=int(rng.integers(config.n_days)))
        area = float(rng.integers(45, 221) if ptype == "casa" else rng.integers(35, 161))

        has = [a for a in config.amenities if rng.random() < a.prevalence]
        floor = _FLOORS[int(rng.integers(len(_FLOORS)))]
        stove = _STOVES[int(rng.integers(len(_STOVES)))]
        rooms = int(rng.integers(1, 6))
        baths = int(min(rooms, rng.integers(1, 5)))
        parking = int(rng.integers(0, 4))

        mult = math.prod(a.multiplier for a in has)
        clean_ppa = hood_base[hood] * type_factor[ptype] * age_factor[age] * mult
        noise = float(rng.normal(0.0, config.noise_std)) if config.noise_std > 0 else 0.0
        # integer COP/m2 times integer area: price / area recovers ppa exactly,
        # so noise-free listings tie with their similar mean
        ppa = max(1.0, float(round(clean_ppa * math.exp(noise))))
        price = ppa * area

        has_names = {a.name for a in has}
        feats = {
            "habitaciones": rooms,
            "banos": baths,
            "parqueaderos": parking,
            "estrato": hood_estrato[hood],
            "ascensores": int(rng.integers(0, 3)) if ptype == "apartamento" else 0,
            "closets": int(rng.integers(0, 5)),
            "piso_habitaciones": floor,
            "tipo_estufa": stove,
            "comedor": bool(rng.random() < 0.7),
            "calentador": bool(rng.random() < 0.8),
            "conjunto_cerrado": bool(rng.random() < 0.6),
            "estudio": bool(rng.random() < 0.3),
            "cocina_gas": stove == "gas",
        }
        for a in config.amenities:
            if a.feature is not None:
                feats[a.feature] = a.name in has_names
        # every optional feature is independently blanked
        for name in list(feats):
            if rng.random() < config.missing_rate:
                feats[name] = MISSING

        description = _describe(rng, config, hood, ptype, has, rooms, baths)
        rid = f"p{i:06d}"
        records.append(PropertyRecord(rid, price, area, date, hood, age, ptype, description, feats))
        truth.append(GroundTruth(rid, tuple(sorted(has_names)), noise, clean_ppa))
    return records, truth


def _describe(rng, config, hood, ptype, has, rooms, baths) -> str:
    parts = [_OPENERS[int(rng.integers(len(_OPENERS)))].format(tipo=ptype, barrio=hood)]
    parts[0] = parts[0][0].upper() + parts[0][1:]
    if rng.random() < 0.6:
        parts.append(f"{rooms} habitaciones y {baths} banos.")
    mentions = [a for a in has if rng.random() < config.text_signal]
    fillers = list(rng.choice(len(_FILLERS), size=int(rng.integers(*config.filler_range)), replace=True))
    body = [f"{a.phrases[int(rng.integers(len(a.phrases)))].capitalize()}." for a in mentions]
    body += [_FILLERS[j] for j in fillers]
    order = rng.permutation(len(body))
    parts.extend(body[j] for j in order)
    return " ".join(parts)


def write_truth(truth: Sequence[GroundTruth], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in truth:
            fh.write(json.dumps(t.to_json(), sort_keys=True) + "\n")


def read_truth(path) -> list[GroundTruth]:
    with open(path, encoding="utf-8") as fh:
        return [GroundTruth.from_json(json.loads(line)) for line in fh if line.strip()]


def oracle_predictions(records: Sequence[PropertyRecord], truth: Sequence[GroundTruth],
                       labeled_ids: Sequence[str]) -> np.ndarray:
    """Polarity predicted from noise-free prices of each property and its similar set.

    Uses only the ground-truth sidecar plus the listing keys and dates; this is
    the accuracy reference that no pipeline model should beat beyond sampling noise.
    """
    from .labeling import build_labeled_dataset

    clean = {t.id: t.clean_price_per_area for t in truth}
    shadow = [
        PropertyRecord(r.id, clean[r.id], 1.0, r.publish_date, r.neighbourhood, r.age,
                       r.property_type, "", {})
        for r in records
    ]
    report = build_labeled_dataset(shadow)
    by_id = {lp.record_id: lp.polarity for lp in report.labeled}
    return np.array([by_id[i] for i in labeled_ids], dtype=np.int64)
