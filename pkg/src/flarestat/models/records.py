"""Input records for the model suite."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError


@dataclass(frozen=True)
class StateMonthly:
    month: int
    viirs_bcm: float
    ndic_bcm: float

    def __post_init__(self):
        if self.viirs_bcm < 0 or self.ndic_bcm < 0:
            raise ValidationError(f"month {self.month}: volumes must be non-negative")


@dataclass(frozen=True)
class CountyMonthly:
    county: int
    month: int
    viirs_bcm: float
    ndic_bcm: float

    def __post_init__(self):
        if self.viirs_bcm < 0 or self.ndic_bcm < 0:
            raise ValidationError(f"county {self.county}, month {self.month}: volumes must be non-negative")


COUNTY_TABLE = (
    ("MCK", "McKenzie"),
    ("DUN", "Dunn"),
    ("WIL", "Williams"),
    ("MTL", "Mountrail"),
    ("BOW", "Bowman"),
    ("DIV", "Divide"),
    ("BRK", "Burke"),
    ("MCL", "McLean"),
    ("BIL", "Billings"),
    ("STK", "Stark"),
    ("SLP", "Slope"),
    ("GV", "Golden Valley"),
)


class CountyRegistry:
    """Ordered county labels; indices are positions in registration order."""

    def __init__(self, table=COUNTY_TABLE):
        self._abbr = []
        self._lookup = {}
        for abbr, name in table:
            self.register(abbr, name)

    def register(self, abbr, name=None):
        key = abbr.strip().upper()
        if key in self._lookup:
            return self._lookup[key]
        idx = len(self._abbr)
        self._abbr.append(key)
        self._lookup[key] = idx
        if name:
            self._lookup[name.strip().upper()] = idx
        return idx

    def index_of(self, label):
        try:
            return self._lookup[str(label).strip().upper()]
        except KeyError:
            raise ValidationError(f"unknown county label {label!r}") from None

    def label_of(self, idx):
        return self._abbr[idx]

    def __len__(self):
        return len(self._abbr)

    @property
    def labels(self):
        return tuple(self._abbr)


SERIES_FIELDS = ("flared", "gas", "oil", "wells", "flaring_wells", "detections", "viirs", "ndic")


@dataclass
class EntitySeries:
    """Monthly observations for one entity (state, county, oilfield or operator).

    ``x`` holds 0-based month indices from the start of the series. Any
    subset of the observation fields may be present; each model kind checks
    for the ones it needs.
    """

    x: np.ndarray
    flared: np.ndarray | None = None
    gas: np.ndarray | None = None
    oil: np.ndarray | None = None
    wells: np.ndarray | None = None
    flaring_wells: np.ndarray | None = None
    detections: np.ndarray | None = None
    viirs: np.ndarray | None = None
    ndic: np.ndarray | None = None
    name: str = ""
    months: list = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        n = self.x.size
        for f in SERIES_FIELDS:
            v = getattr(self, f)
            if v is None:
                continue
            v = np.asarray(v, dtype=float)
            if v.shape != (n,):
                raise ValidationError(f"series field {f!r} has {v.size} values for {n} months")
            if np.any(v < 0) or not np.all(np.isfinite(v)):
                raise ValidationError(f"series field {f!r} must be finite and non-negative")
            setattr(self, f, v)
        for f in ("wells", "flaring_wells", "detections"):
            v = getattr(self, f)
            if v is not None and np.any(v != np.floor(v)):
                raise ValidationError(f"series field {f!r} must hold integer counts")
        if self.wells is not None and self.flaring_wells is not None and np.any(self.flaring_wells > self.wells):
            i = int(np.flatnonzero(self.flaring_wells > self.wells)[0])
            raise ValidationError(f"month {i}: flaring wells exceed active wells")

    def __len__(self):
        return self.x.size

    def require(self, kind, *fields):
        for f in fields:
            if getattr(self, f) is None:
                raise ValidationError(f"model kind {kind!r} requires series field {f!r}")
