"""Problem instances: surgery types, surgeries, OR/day slots.

An instance bundles everything the scheduling models need: per-type
duration statistics fitted from raw observations, the surgery list with
release/due windows, the OR/day capacity grid, and the overtime risk
level alpha. Instances round-trip through a directory of three CSV
files (types.csv, surgeries.csv, slots.csv) and can also be synthesized
from a named profile for experiments.
"""

from __future__ import annotations

import csv
import math
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np

from .distributions import (
    LogNormalParams,
    NormalParams,
    fit_type_params,
    lognormal_from_moments,
)

# Observations outside this window are considered recording errors and
# dropped before fitting (nothing runs longer than a 12 hour block).
MAX_DURATION_MINUTES = 720.0


class InstanceFormatError(ValueError):
    """Raised for malformed instance files; message carries the row number."""


@dataclass(frozen=True)
class SurgeryType:
    type_id: str
    sample_mean: float
    normal: NormalParams
    lognormal: LogNormalParams
    n_observations: int
    duration_pool: tuple[float, ...] = ()


@dataclass(frozen=True)
class Surgery:
    surgery_id: str
    type_id: str
    release: int
    due: int | None  # day index, None when the surgery carries no due date

    @property
    def has_due(self) -> bool:
        return self.due is not None


@dataclass(frozen=True)
class ORDaySlot:
    or_id: str
    day: int
    capacity: float

    @property
    def key(self) -> tuple[str, int]:
        return (self.or_id, self.day)


@dataclass
class Instance:
    """A scheduling instance; see module docstring for the file layout."""

    types: list[SurgeryType]
    surgeries: list[Surgery]
    slots: list[ORDaySlot]
    alpha: float = 0.15
    name: str = "instance"
    _type_map: dict[str, SurgeryType] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        self._type_map = {t.type_id: t for t in self.types}
        seen = set()
        for s in self.surgeries:
            if s.surgery_id in seen:
                raise InstanceFormatError(f"duplicate surgery id {s.surgery_id!r}")
            seen.add(s.surgery_id)
            if s.type_id not in self._type_map:
                raise InstanceFormatError(
                    f"surgery {s.surgery_id!r} references unknown type {s.type_id!r}"
                )
            if s.release < 0:
                raise InstanceFormatError(f"surgery {s.surgery_id!r} has negative release")
            if s.due is not None and s.due < s.release:
                raise InstanceFormatError(
                    f"surgery {s.surgery_id!r} has due day {s.due} before release {s.release}"
                )
        slot_seen = set()
        for sl in self.slots:
            if sl.key in slot_seen:
                raise InstanceFormatError(f"duplicate slot {sl.key}")
            slot_seen.add(sl.key)
            if sl.capacity <= 0:
                raise InstanceFormatError(f"slot {sl.key} has nonpositive capacity")

    def type_of(self, surgery: Surgery) -> SurgeryType:
        return self._type_map[surgery.type_id]

    def get_type(self, type_id: str) -> SurgeryType:
        return self._type_map[type_id]

    @property
    def horizon(self) -> int:
        """Largest day index in the slot grid."""
        return max(sl.day for sl in self.slots)

    @property
    def days(self) -> list[int]:
        return sorted({sl.day for sl in self.slots})

    def sorted_slots(self) -> list[ORDaySlot]:
        return sorted(self.slots, key=lambda sl: (sl.or_id, sl.day))

    def due_index(self, surgery: Surgery) -> int:
        """Effective due index q_s: stated due, else latest stated due + 1.

        Instances without any dated surgery fall back to horizon + 1 so
        the priority weight 1/(q+1) stays well defined.
        """
        if surgery.due is not None:
            return surgery.due
        dated = [s.due for s in self.surgeries if s.due is not None]
        if dated:
            return max(dated) + 1
        return self.horizon + 1

    def must_schedule(self, surgery: Surgery) -> bool:
        """p_s: a surgery is mandatory when its due day lies inside the horizon."""
        return surgery.due is not None and surgery.due <= self.horizon

    def mean_sd(self) -> float:
        """Mean duration standard deviation across surgeries (normal fit)."""
        sds = [np.sqrt(self.type_of(s).normal.sigma2) for s in self.surgeries]
        return float(np.mean(sds)) if sds else 0.0

    def total_mean_duration(self) -> float:
        return float(sum(self.type_of(s).sample_mean for s in self.surgeries))

    def total_capacity(self) -> float:
        return math.fsum(sl.capacity for sl in self.slots)


def _parse_float(value, row, col):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise InstanceFormatError(f"row {row}: invalid number {value!r} in column {col!r}")


def _parse_int(value, row, col):
    try:
        return int(value)
    except (TypeError, ValueError):
        raise InstanceFormatError(f"row {row}: invalid integer {value!r} in column {col!r}")


def _read_rows(path, required):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise InstanceFormatError(f"{path}: empty file")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise InstanceFormatError(f"{path}: missing columns {missing}")
        return list(reader)


def load_instance(directory, alpha: float = 0.15, name: str | None = None) -> Instance:
    """Load an instance from types.csv / surgeries.csv / slots.csv.

    Duration observations outside (0, 720] minutes are dropped with a
    warning before fitting; surgeries whose mean duration exceeds the
    largest slot capacity can never be scheduled and are excluded, also
    with a warning.
    """
    from pathlib import Path

    directory = Path(directory)
    type_rows = _read_rows(directory / "types.csv", ["type_id", "duration_minutes"])
    pools: dict[str, list[float]] = {}
    dropped = 0
    for i, row in enumerate(type_rows, start=2):  # header is row 1
        tid = (row["type_id"] or "").strip()
        if not tid:
            raise InstanceFormatError(f"types.csv row {i}: empty type_id")
        dur = _parse_float(row["duration_minutes"], i, "duration_minutes")
        pools.setdefault(tid, [])
        if dur <= 0.0 or dur > MAX_DURATION_MINUTES:
            dropped += 1
            continue
        pools[tid].append(dur)
    if dropped:
        warnings.warn(f"dropped {dropped} duration observations outside (0, {MAX_DURATION_MINUTES}]")

    types = []
    for tid in sorted(pools):
        obs = pools[tid]
        if not obs:
            raise InstanceFormatError(
                f"type {tid!r} has no usable duration observations after cleaning"
            )
        sample_mean, normal, lognormal = fit_type_params(obs)
        types.append(
            SurgeryType(
                type_id=tid,
                sample_mean=sample_mean,
                normal=normal,
                lognormal=lognormal,
                n_observations=len(obs),
                duration_pool=tuple(obs),
            )
        )
    type_map = {t.type_id: t for t in types}

    slot_rows = _read_rows(directory / "slots.csv", ["or_id", "day", "capacity_minutes"])
    slots = []
    for i, row in enumerate(slot_rows, start=2):
        slots.append(
            ORDaySlot(
                or_id=(row["or_id"] or "").strip(),
                day=_parse_int(row["day"], i, "day"),
                capacity=_parse_float(row["capacity_minutes"], i, "capacity_minutes"),
            )
        )
    if not slots:
        raise InstanceFormatError("slots.csv: no slots defined")
    max_cap = max(sl.capacity for sl in slots)

    surgery_rows = _read_rows(directory / "surgeries.csv", ["surgery_id", "type_id", "release", "due"])
    surgeries = []
    excluded = []
    for i, row in enumerate(surgery_rows, start=2):
        sid = (row["surgery_id"] or "").strip()
        tid = (row["type_id"] or "").strip()
        if tid not in type_map:
            raise InstanceFormatError(f"surgeries.csv row {i}: unknown type {tid!r}")
        due_raw = (row["due"] or "").strip()
        surgery = Surgery(
            surgery_id=sid,
            type_id=tid,
            release=_parse_int(row["release"], i, "release"),
            due=_parse_int(due_raw, i, "due") if due_raw else None,
        )
        if type_map[tid].sample_mean > max_cap:
            excluded.append(sid)
            continue
        surgeries.append(surgery)
    if excluded:
        warnings.warn(
            f"excluded {len(excluded)} surgeries whose mean duration exceeds "
            f"every slot capacity: {excluded[:5]}{'...' if len(excluded) > 5 else ''}"
        )

    return Instance(
        types=types,
        surgeries=surgeries,
        slots=slots,
        alpha=alpha,
        name=name or directory.name,
    )


def write_instance(instance: Instance, directory) -> None:
    """Write the three CSV files for an instance (inverse of load_instance).

    Types are written one row per duration observation, so the files can
    only be produced for instances that carry observation pools.
    """
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "types.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["type_id", "duration_minutes"])
        for t in instance.types:
            if not t.duration_pool:
                raise ValueError(f"type {t.type_id!r} has no duration pool to write")
            for d in t.duration_pool:
                w.writerow([t.type_id, repr(float(d))])
    with open(directory / "surgeries.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["surgery_id", "type_id", "release", "due"])
        for s in instance.surgeries:
            w.writerow([s.surgery_id, s.type_id, s.release, "" if s.due is None else s.due])
    with open(directory / "slots.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["or_id", "day", "capacity_minutes"])
        for sl in sorted(instance.slots, key=lambda sl: (sl.day, sl.or_id)):
            w.writerow([sl.or_id, sl.day, repr(float(sl.capacity))])


@dataclass(frozen=True)
class Profile:
    """Shape parameters for synthetic instances.

    release_histogram gives the number of surgeries released on each day
    0..4; ors_per_day the number of identical-capacity ORs per day. Slot
    capacity overrides map (day, or_index) to a capacity in minutes.
    """

    name: str
    n_surgeries: int
    n_types: int
    n_dated: int
    release_histogram: tuple[int, ...]
    ors_per_day: tuple[int, ...]
    base_capacity: float = 510.0
    capacity_overrides: dict[tuple[int, int], float] = field(default_factory=dict)
    mean_sd: float = 45.0
    total_mean_duration: float | None = None


PROFILES: dict[str, Profile] = {
    "cardiology1": Profile(
        name="cardiology1",
        n_surgeries=216,
        n_types=50,
        n_dated=13,
        release_histogram=(184, 18, 3, 10, 1),
        ors_per_day=(4, 5, 4, 5, 5),
        mean_sd=45.4,
        total_mean_duration=24191.0,
    ),
    "cardiology2": Profile(
        name="cardiology2",
        n_surgeries=158,
        n_types=40,
        n_dated=12,
        release_histogram=(136, 6, 6, 6, 4),
        ors_per_day=(4, 5, 4, 5, 5),
        mean_sd=46.1,
        total_mean_duration=17543.0,
    ),
    "ent1": Profile(
        name="ent1",
        n_surgeries=137,
        n_types=45,
        n_dated=5,
        release_histogram=(129, 5, 0, 2, 1),
        ors_per_day=(2, 2, 2, 2, 2),
        capacity_overrides={(4, 1): 720.0},
        mean_sd=62.9,
        total_mean_duration=18808.0,
    ),
    "ent2": Profile(
        name="ent2",
        n_surgeries=52,
        n_types=31,
        n_dated=4,
        release_histogram=(48, 1, 2, 1, 0),
        ors_per_day=(2, 2, 2, 2, 2),
        capacity_overrides={(4, 1): 720.0},
        mean_sd=54.2,
        total_mean_duration=6279.0,
    ),
}


def _synth_pool(rng, mean_t, sd_t, n_obs, cap):
    """Observation pool with exact population mean/sd inside (0, cap]."""
    for attempt in range(200):
        if sd_t <= 0.0:
            return np.full(n_obs, mean_t)
        ln = lognormal_from_moments(mean_t, sd_t * sd_t)
        x = np.exp(ln.mu + np.sqrt(ln.sigma2) * rng.standard_normal(n_obs))
        sx = float(np.std(x))
        if sx <= 0.0:
            continue
        y = mean_t + (x - np.mean(x)) * (sd_t / sx)
        if np.all(y > 0.0) and np.all(y <= cap):
            return y
        # Too spread out for the window: pull the variance target in a bit.
        sd_t *= 0.9
    raise RuntimeError(f"could not synthesize pool for mean={mean_t}, sd={sd_t}")


def synthesize_instance(profile, seed: int, alpha: float = 0.15) -> Instance:
    """Deterministic synthetic instance matching a profile's shape.

    Same (profile, seed, alpha) always produces the identical instance.
    Per-type observation pools are drawn from a lognormal and affinely
    rescaled so the fitted sample mean and population sd hit their
    targets exactly; the per-surgery mean sd therefore matches the
    profile's mean_sd up to the final rescale residual (< 1e-9).
    """
    if isinstance(profile, str):
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        profile = PROFILES[profile]
    if sum(profile.release_histogram) != profile.n_surgeries:
        raise ValueError("release histogram must sum to the number of surgeries")
    if profile.n_types > profile.n_surgeries:
        raise ValueError("cannot have more types than surgeries")

    rng = np.random.default_rng(
        np.random.SeedSequence([seed, zlib.crc32(profile.name.encode("utf-8"))])
    )

    # Slot grid first: capacities bound the observation pools.
    slots = []
    for day, n_or in enumerate(profile.ors_per_day):
        for k in range(n_or):
            cap = profile.capacity_overrides.get((day, k), profile.base_capacity)
            slots.append(ORDaySlot(or_id=f"OR{k + 1}", day=day, capacity=cap))
    max_cap = max(sl.capacity for sl in slots)

    # Surgery-to-type assignment: every type used at least once, the rest
    # drawn from a skewed popularity distribution (few common procedures,
    # a long tail of rare ones).
    n_t, n_s = profile.n_types, profile.n_surgeries
    popularity = rng.dirichlet(np.full(n_t, 0.6))
    extra = rng.choice(n_t, size=n_s - n_t, p=popularity)
    type_of_surgery = np.concatenate([np.arange(n_t), extra])
    rng.shuffle(type_of_surgery)
    counts = np.bincount(type_of_surgery, minlength=n_t)

    # Per-type mean targets, rescaled so the surgery-weighted total mean
    # matches the profile when one is given.
    means = np.exp(rng.normal(np.log(110.0), 0.45, size=n_t))
    means = np.clip(means, 30.0, 0.8 * max_cap)
    if profile.total_mean_duration is not None:
        for _ in range(8):
            scale = profile.total_mean_duration / float(counts @ means)
            means = np.clip(means * scale, 25.0, 0.82 * max_cap)

    # Per-type sd targets, rescaled so the per-surgery mean sd is exact.
    sds = profile.mean_sd * np.exp(rng.normal(0.0, 0.35, size=n_t))
    sds = np.minimum(sds, 0.65 * means)
    for _ in range(12):
        scale = profile.mean_sd / (float(counts @ sds) / n_s)
        sds = np.minimum(sds * scale, 0.65 * means)

    types = []
    width = len(str(n_t))
    for t in range(n_t):
        n_obs = int(rng.integers(30, 81))
        pool = _synth_pool(rng, float(means[t]), float(sds[t]), n_obs, MAX_DURATION_MINUTES)
        sample_mean, normal, lognormal = fit_type_params(pool)
        types.append(
            SurgeryType(
                type_id=f"T{t + 1:0{width}d}",
                sample_mean=sample_mean,
                normal=normal,
                lognormal=lognormal,
                n_observations=n_obs,
                duration_pool=tuple(float(v) for v in pool),
            )
        )

    # Releases follow the profile histogram; due dates go to n_dated
    # randomly chosen surgeries, uniform in [release, last day].
    releases = np.repeat(np.arange(len(profile.release_histogram)), profile.release_histogram)
    rng.shuffle(releases)
    last_day = len(profile.ors_per_day) - 1
    dated_idx = set(rng.choice(n_s, size=profile.n_dated, replace=False).tolist())
    surgeries = []
    s_width = len(str(n_s))
    for i in range(n_s):
        rel = int(releases[i])
        due = int(rng.integers(rel, last_day + 1)) if i in dated_idx else None
        surgeries.append(
            Surgery(
                surgery_id=f"S{i + 1:0{s_width}d}",
                type_id=types[int(type_of_surgery[i])].type_id,
                release=rel,
                due=due,
            )
        )

    return Instance(
        types=types,
        surgeries=surgeries,
        slots=slots,
        alpha=alpha,
        name=profile.name,
    )


def restrict_to_first(instance: Instance, n_surgeries: int) -> Instance:
    """Small copy of an instance keeping only the first n surgeries."""
    kept = instance.surgeries[:n_surgeries]
    used = {s.type_id for s in kept}
    return Instance(
        types=[t for t in instance.types if t.type_id in used],
        surgeries=list(kept),
        slots=list(instance.slots),
        alpha=instance.alpha,
        name=f"{instance.name}-first{n_surgeries}",
    )
