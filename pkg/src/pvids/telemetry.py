"""Load/PV profiles, per-frame simulation, meter corruption, features and datasets."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import __version__
from .attack import AttackSpec, ScenarioSetting, apply_attack, sample_attack, spoof_pv_readings
from .der_control import Fleet, FleetFlow, OuterConfig, PvOutput, PvUnit, solve_fleet
from .grid import NetworkModel
from .powerflow import SolverConfig

log = logging.getLogger(__name__)

LOAD_PF = 0.78
Q_PER_P = math.tan(math.acos(LOAD_PF))
P_CAP_KW = 3802.19
Q_CAP_KVAR = 2964.6
MINUTES_PER_DAY = 720
DAY_START_HOUR = 7.0
FEATURES = ("p_d", "q_d", "p_gen", "q_gen", "dp", "dq")
FEATURE_HEADER = ["timestamp", *FEATURES, "label"]

# purpose tags for derived random streams
TAG_METER, TAG_MISSING, TAG_ATTACK = 1, 2, 3
TAG_PROFILE, TAG_SELECT = 10, 11


class ProfileError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


def stream(seed: int, index: int, tag: int) -> np.random.Generator:
    """Independent generator for one (seed, frame/purpose) pair."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index), int(tag)])


# ---------------------------------------------------------------- profiles


@dataclass(frozen=True)
class FrameInput:
    timestamp: int
    load_p: np.ndarray  # kW per load bus
    load_q: np.ndarray  # kvar per load bus
    pv_avail: np.ndarray  # kW per PV unit


@dataclass
class Profiles:
    timestamps: np.ndarray  # (T,) minute index
    load_buses: tuple[int, ...]
    load_p: np.ndarray  # (T, L)
    pv_avail: np.ndarray  # (T, K)
    houses: dict = field(default_factory=dict)
    rescale: float = 1.0

    @property
    def load_q(self) -> np.ndarray:
        return self.load_p * Q_PER_P

    def __len__(self) -> int:
        return len(self.timestamps)

    def frame(self, i: int) -> FrameInput:
        return FrameInput(int(self.timestamps[i]), self.load_p[i].copy(), self.load_p[i] * Q_PER_P, self.pv_avail[i].copy())

    def __iter__(self) -> Iterator[FrameInput]:
        for i in range(len(self)):
            yield self.frame(i)


def enforce_caps(load_p: np.ndarray, warn: bool = False) -> tuple[np.ndarray, float]:
    """Globally rescale so no frame exceeds the feeder's nominal P/Q totals."""
    tot = load_p.sum(axis=1)
    peak = max(tot.max(initial=0.0), 0.0)
    scale = 1.0
    if peak > 0:
        scale = min(1.0, P_CAP_KW / peak, Q_CAP_KVAR / (peak * Q_PER_P))
    if scale < 1.0:
        if warn and scale < 1 - 1e-6:  # ignore breaches caused by text rounding
            warnings.warn(f"load exceeds feeder cap; rescaled by {scale:.6f}", stacklevel=3)
        # a hair below the exact ratio so rounding can never breach the cap
        scale *= 1 - 1e-12
        load_p = load_p * scale
    return load_p, scale


@dataclass(frozen=True)
class ProfileParams:
    """Knobs of the synthetic household/PV generator (kW unless noted)."""

    houses_min: int = 4
    houses_max: int = 10
    archetype_kw: tuple[float, float, float] = (4.0, 6.0, 9.0)
    trough: float = 0.45  # diurnal floor relative to the peaks
    day_sigma: float = 0.05  # shared day-to-day level variation
    house_day_sigma: float = 0.10
    noise_sigma: float = 0.05
    spike_rate_per_hour: float = 3.0
    spike_kw: tuple[float, float] = (0.5, 4.0)
    spike_minutes: float = 12.0
    pv_peak: tuple[float, float] = (0.85, 1.0)  # clear-sky peak / rating
    pv_shape: float = 0.7
    cloud_rate_per_hour: float = 0.25
    cloud_depth: tuple[float, float] = (0.2, 0.6)
    cloud_minutes: float = 6.0


def _diurnal(hour: np.ndarray, trough: float = 0.45) -> np.ndarray:
    # morning and evening peaks around a midday trough (households away)
    return (
        trough
        + 0.55 * np.exp(-(((hour - 7.8) / 1.1) ** 2))
        + 0.85 * np.exp(-(((hour - 18.6) / 1.4) ** 2))
        + 0.10 * np.exp(-(((hour - 12.5) / 0.8) ** 2))
    )


def _events(rng, shape, rate_per_min, mean_len, mags):
    """Sum of rectangular pulses with Poisson starts, geometric lengths and given magnitudes."""
    n_series, n_t = shape
    starts = rng.random(shape) < rate_per_min
    si, st = np.nonzero(starts)
    lens = rng.geometric(1.0 / mean_len, size=si.size)
    mag = mags(si.size)
    acc = np.zeros((n_series, n_t + 1))
    np.add.at(acc, (si, st), mag)
    np.add.at(acc, (si, np.minimum(st + lens, n_t)), -mag)
    return np.cumsum(acc, axis=1)[:, :n_t]


def synth_profiles(
    days: int,
    minutes_per_day: int = MINUTES_PER_DAY,
    seed: int = 0,
    load_buses: Sequence[int] | None = None,
    pv_rated: Sequence[float] = (420.0, 180.0, 330.0, 390.0),
    params: ProfileParams = ProfileParams(),
) -> Profiles:
    """Per-minute household loads (4-10 houses per bus) and PV availability."""
    if load_buses is None:
        from .grid import default_network

        load_buses = default_network().bus_ids("load")
    load_buses = tuple(load_buses)
    rng = stream(seed, 0, TAG_PROFILE)
    pp = params
    n_t = days * minutes_per_day
    minute = np.arange(minutes_per_day)
    hour = DAY_START_HOUR + minute / 60.0 * (MINUTES_PER_DAY / minutes_per_day)
    shape = np.tile(_diurnal(hour, params.trough), days)

    # house assignment, recorded for reproducibility
    houses = {}
    levels = []
    owner = []
    for j, bus in enumerate(load_buses):
        n = int(rng.integers(pp.houses_min, pp.houses_max + 1))
        kinds = rng.integers(0, 3, size=n)
        houses[bus] = "".join("ABC"[k] for k in kinds)
        levels.extend(pp.archetype_kw[k] for k in kinds)
        owner.extend([j] * n)
    levels = np.array(levels)
    owner = np.array(owner)
    n_h = levels.size

    day_f = np.repeat(rng.lognormal(0.0, pp.day_sigma, size=days), minutes_per_day)
    house_day = np.repeat(rng.lognormal(0.0, pp.house_day_sigma, size=(n_h, days)), minutes_per_day, axis=1)
    noise = 1.0 + pp.noise_sigma * rng.standard_normal((n_h, n_t))
    base = levels[:, None] * shape[None, :] * day_f[None, :] * house_day * np.clip(noise, 0.5, 1.5)
    rate = pp.spike_rate_per_hour / 60.0 * (shape / shape.mean())
    spikes = _events(
        rng, (n_h, n_t), rate[None, :], pp.spike_minutes,
        lambda k: rng.uniform(*pp.spike_kw, size=k),
    )
    house_p = base + spikes
    load_p = np.zeros((n_t, len(load_buses)))
    np.add.at(load_p.T, owner, house_p)
    load_p, scale = enforce_caps(load_p)

    # PV: clear-sky bell per day with shared cloud dips and a weaker local component
    x = (minute + 0.5) / minutes_per_day
    bell = np.tile(np.sin(np.pi * x) ** pp.pv_shape, days)
    peak = np.repeat(rng.uniform(*pp.pv_peak, size=days), minutes_per_day)
    depth_fn = lambda k: rng.uniform(*pp.cloud_depth, size=k)  # noqa: E731
    cloud_rate = pp.cloud_rate_per_hour / 60.0
    shared = _events(rng, (1, n_t), cloud_rate, pp.cloud_minutes, depth_fn)[0]
    k = len(pv_rated)
    local = _events(rng, (k, n_t), cloud_rate / 3, pp.cloud_minutes, depth_fn)
    trans = np.clip(1.0 - shared[None, :] - local, 0.05, 1.0)
    pv = np.asarray(pv_rated, dtype=float)[:, None] * (bell * peak)[None, :] * trans
    return Profiles(np.arange(n_t), load_buses, load_p, pv.T.copy(), houses, scale)


def import_profiles(load_csv, pv_csv, load_buses: Sequence[int] | None = None, n_pv: int = 4) -> Profiles:
    """Build profiles from ``timestamp,bus,p_kw`` and ``timestamp,pv_id,p_avail_kw`` files."""

    def read(path, header):
        with open(path, newline="", encoding="utf-8") as fh:
            rd = csv.reader(fh)
            head = [h.strip() for h in next(rd, [])]
            if head != header:
                raise ProfileError(f"{path}: expected header {','.join(header)}")
            rows = []
            for lineno, row in enumerate(rd, start=2):
                if not row:
                    continue
                try:
                    rows.append((int(row[0]), int(row[1]), float(row[2])))
                except (ValueError, IndexError) as exc:
                    raise ProfileError(f"{path}:{lineno}: {exc}") from None
            return rows

    lrows = read(load_csv, ["timestamp", "bus", "p_kw"])
    prows = read(pv_csv, ["timestamp", "pv_id", "p_avail_kw"])
    ts = sorted({r[0] for r in lrows} | {r[0] for r in prows})
    if not ts:
        raise ProfileError("no data rows")
    expected = range(ts[0], ts[-1] + 1)
    gaps = sorted(set(expected) - set(ts))
    if gaps:
        raise ProfileError(f"timestamp gaps: {gaps}")
    if load_buses is None:
        load_buses = sorted({r[1] for r in lrows})
    load_buses = tuple(load_buses)
    col = {b: j for j, b in enumerate(load_buses)}
    T = len(ts)
    load_p = np.full((T, len(load_buses)), np.nan)
    pv = np.full((T, n_pv), np.nan)
    for t, b, v in lrows:
        if b not in col:
            raise ProfileError(f"bus {b} is not a load bus")
        load_p[t - ts[0], col[b]] = v
    for t, k, v in prows:
        if not 1 <= k <= n_pv:
            raise ProfileError(f"pv_id {k} out of range 1..{n_pv}")
        pv[t - ts[0], k - 1] = v
    miss_l = sorted({ts[0] + int(i) for i in np.nonzero(np.isnan(load_p).any(axis=1))[0]})
    miss_p = sorted({ts[0] + int(i) for i in np.nonzero(np.isnan(pv).any(axis=1))[0]})
    if miss_l or miss_p:
        raise ProfileError(f"timestamp gaps: load {miss_l[:20]} pv {miss_p[:20]}")
    if (load_p < 0).any() or (pv < 0).any():
        raise ProfileError("negative power values")
    load_p, scale = enforce_caps(load_p, warn=True)
    return Profiles(np.arange(ts[0], ts[-1] + 1), load_buses, load_p, pv, {}, scale)


def write_profiles(profiles: Profiles, load_csv, pv_csv) -> None:
    with open(load_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "bus", "p_kw"])
        for i, t in enumerate(profiles.timestamps):
            for j, b in enumerate(profiles.load_buses):
                w.writerow([int(t), b, f"{profiles.load_p[i, j]:.6f}"])
    with open(pv_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "pv_id", "p_avail_kw"])
        for i, t in enumerate(profiles.timestamps):
            for k in range(profiles.pv_avail.shape[1]):
                w.writerow([int(t), k + 1, f"{profiles.pv_avail[i, k]:.6f}"])


# ------------------------------------------------------------ measurements


@dataclass
class MeasurementSnapshot:
    timestamp: int
    load_p: np.ndarray
    load_q: np.ndarray
    missing: np.ndarray  # bool per load bus; p and q go missing together
    pv_p: np.ndarray
    pv_q: np.ndarray
    p_gen: float
    q_gen: float
    label: int  # 0 normal, 1 attack
    attack: AttackSpec | None = None


@dataclass
class Measurements:
    """Column-stacked snapshots for m frames."""

    timestamps: np.ndarray
    load_p: np.ndarray  # (m, L)
    load_q: np.ndarray
    missing: np.ndarray  # (m, L) bool
    pv_p: np.ndarray  # (m, K)
    pv_q: np.ndarray
    p_gen: np.ndarray  # (m,)
    q_gen: np.ndarray
    labels: np.ndarray
    attacks: dict = field(default_factory=dict)  # row index -> AttackSpec

    def __len__(self) -> int:
        return len(self.timestamps)

    def row(self, i: int) -> MeasurementSnapshot:
        return MeasurementSnapshot(
            int(self.timestamps[i]), self.load_p[i].copy(), self.load_q[i].copy(), self.missing[i].copy(),
            self.pv_p[i].copy(), self.pv_q[i].copy(), float(self.p_gen[i]), float(self.q_gen[i]),
            int(self.labels[i]), self.attacks.get(i),
        )

    @classmethod
    def from_rows(cls, rows: Sequence[MeasurementSnapshot]) -> "Measurements":
        return cls(
            np.array([r.timestamp for r in rows]),
            np.array([r.load_p for r in rows], dtype=float),
            np.array([r.load_q for r in rows], dtype=float),
            np.array([r.missing for r in rows], dtype=bool),
            np.array([r.pv_p for r in rows], dtype=float),
            np.array([r.pv_q for r in rows], dtype=float),
            np.array([r.p_gen for r in rows], dtype=float),
            np.array([r.q_gen for r in rows], dtype=float),
            np.array([r.label for r in rows], dtype=int),
            {i: r.attack for i, r in enumerate(rows) if r.attack is not None},
        )

    def take(self, idx) -> "Measurements":
        idx = np.asarray(idx)
        pos = {int(j): i for i, j in enumerate(idx)}
        return Measurements(
            self.timestamps[idx], self.load_p[idx], self.load_q[idx], self.missing[idx],
            self.pv_p[idx], self.pv_q[idx], self.p_gen[idx], self.q_gen[idx], self.labels[idx],
            {pos[j]: a for j, a in self.attacks.items() if j in pos},
        )


@dataclass
class SimResult:
    measurements: Measurements  # pre-corruption readings
    normal: FleetFlow  # counterfactual (no-attack) physics, all frames
    attacked: FleetFlow | None  # physics of attacked frames only
    attacked_rows: np.ndarray
    ok: np.ndarray  # frames whose solves converged
    true_pv_p: np.ndarray  # (m, K) actual outputs, attacked or not
    true_pv_q: np.ndarray
    counterfactual_p_gen: np.ndarray


def _base_injections(model: NetworkModel, load_buses, load_p, load_q):
    m = load_p.shape[0]
    bp = np.zeros((model.n_bus, m))
    bq = np.zeros((model.n_bus, m))
    idx = np.asarray(load_buses) - 1
    bp[idx] = -load_p.T
    bq[idx] = -load_q.T
    return bp, bq


def simulate(
    model: NetworkModel,
    pvs: Sequence[PvUnit],
    profiles: Profiles,
    attacks: Mapping[int, AttackSpec] | None = None,
    cfg: SolverConfig = SolverConfig(),
    outer: OuterConfig = OuterConfig(),
) -> SimResult:
    """Run every frame; attacked frames get a tampered solve plus spoofed PV telemetry."""
    attacks = dict(attacks or {})
    m = len(profiles)
    lp = profiles.load_p
    lq = profiles.load_q
    bp, bq = _base_injections(model, profiles.load_buses, lp, lq)
    avail = profiles.pv_avail.T
    normal = solve_fleet(model, bp, bq, Fleet.broadcast(pvs, m), avail, cfg, outer)
    ok = normal.ok.copy()
    p_gen = normal.flow.slack_p.copy()
    q_gen = normal.flow.slack_q.copy()
    true_p = normal.p.T.copy()
    true_q = normal.q.T.copy()
    rows = np.array(sorted(attacks), dtype=int)
    attacked = None
    if rows.size:
        tampered = [apply_attack(pvs, attacks[int(i)]) for i in rows]
        attacked = solve_fleet(model, bp[:, rows], bq[:, rows], Fleet.stack(tampered), avail[:, rows], cfg, outer)
        ok[rows] &= attacked.ok
        p_gen[rows] = attacked.flow.slack_p
        q_gen[rows] = attacked.flow.slack_q
        true_p[rows] = attacked.p.T
        true_q[rows] = attacked.q.T
    # hidden attacker: PV telemetry is the counterfactual output on every frame
    pv_p = normal.p.T.copy()
    pv_q = normal.q.T.copy()
    labels = np.zeros(m, dtype=int)
    labels[rows] = 1
    meas = Measurements(
        profiles.timestamps.copy(), lp.copy(), lq.copy(), np.zeros(lp.shape, dtype=bool),
        pv_p, pv_q, p_gen, q_gen, labels, {int(i): attacks[int(i)] for i in rows},
    )
    return SimResult(meas, normal, attacked, rows, ok, true_p, true_q, normal.flow.slack_p.copy())


def simulate_frame(
    model: NetworkModel,
    pvs: Sequence[PvUnit],
    setting: ScenarioSetting,
    frame: FrameInput,
    attack: AttackSpec | None = None,
    cfg: SolverConfig = SolverConfig(),
    outer: OuterConfig = OuterConfig(),
    load_buses: Sequence[int] | None = None,
) -> MeasurementSnapshot:
    if tuple(u.mode for u in pvs) != setting.modes:
        raise ValueError(f"PV modes do not match setting {setting.id}")
    if load_buses is None:
        load_buses = model.bus_ids("load")
    prof = Profiles(
        np.array([frame.timestamp]), tuple(load_buses), np.asarray(frame.load_p, dtype=float)[None, :],
        np.asarray(frame.pv_avail, dtype=float)[None, :],
    )
    res = simulate(model, pvs, prof, {0: attack} if attack is not None else None, cfg, outer)
    if not res.ok[0]:
        raise SimulationError(f"frame {frame.timestamp}: power flow did not converge")
    snap = res.measurements.row(0)
    if attack is not None:
        cf = [PvOutput(p, q) for p, q in zip(res.normal.p[:, 0], res.normal.q[:, 0])]
        rep = np.array(spoof_pv_readings(cf))
        snap.pv_p, snap.pv_q = rep[:, 0], rep[:, 1]
    return snap


# -------------------------------------------------------------- corruption


def apply_meter_error(value, rng: np.random.Generator, max_err: float = 0.01):
    """Multiplicative uniform meter error, independent per reading."""
    value = np.asarray(value, dtype=float)
    eps = rng.uniform(-max_err, max_err, size=value.shape)
    out = value * (1.0 + eps)
    return float(out) if out.ndim == 0 else out


def meter_error_frame(snap: MeasurementSnapshot, rng: np.random.Generator, max_err: float = 0.01) -> MeasurementSnapshot:
    vec = np.concatenate([snap.load_p, snap.load_q, snap.pv_p, snap.pv_q, [snap.p_gen, snap.q_gen]])
    out = apply_meter_error(vec, rng, max_err)
    L, K = snap.load_p.size, snap.pv_p.size
    return replace(
        snap,
        load_p=out[:L], load_q=out[L:2 * L], pv_p=out[2 * L:2 * L + K], pv_q=out[2 * L + K:2 * L + 2 * K],
        p_gen=float(out[-2]), q_gen=float(out[-1]),
    )


def inject_missing(
    snap: MeasurementSnapshot, rng: np.random.Generator, frame_prob: float = 0.2, max_bus_frac: float = 0.1
) -> MeasurementSnapshot:
    if not (0 <= frame_prob <= 1 and 0 <= max_bus_frac <= 1):
        raise ValueError("probabilities must lie in [0, 1]")
    L = snap.load_p.size
    kmax = int(math.floor(max_bus_frac * L + 1e-9))
    if rng.random() >= frame_prob or kmax < 1:
        return snap
    k = int(rng.integers(1, kmax + 1))
    mask = snap.missing.copy()
    mask[rng.choice(L, size=k, replace=False)] = True
    return replace(snap, missing=mask)


def corrupt(meas: Measurements, seed: int, missing: bool, max_err: float = 0.01,
            frame_prob: float = 0.2, max_bus_frac: float = 0.1) -> Measurements:
    rows = []
    for i in range(len(meas)):
        t = int(meas.timestamps[i])
        snap = meter_error_frame(meas.row(i), stream(seed, t, TAG_METER), max_err)
        if missing:
            snap = inject_missing(snap, stream(seed, t, TAG_MISSING), frame_prob, max_bus_frac)
        rows.append(snap)
    return Measurements.from_rows(rows)


# ---------------------------------------------------------------- features


@dataclass(frozen=True)
class FeatureVector:
    p_d: float
    q_d: float
    p_gen: float
    q_gen: float
    dp: float
    dq: float
    label: int

    def as_array(self) -> np.ndarray:
        return np.array([self.p_d, self.q_d, self.p_gen, self.q_gen, self.dp, self.dq])


def feature_matrix(meas: Measurements) -> np.ndarray:
    """(m, 6) features; missing load readings count as zero.  PV readings are not used."""
    lp = np.where(meas.missing, 0.0, meas.load_p)
    lq = np.where(meas.missing, 0.0, meas.load_q)
    p_d = lp.sum(axis=1)
    q_d = lq.sum(axis=1)
    return np.column_stack([p_d, q_d, meas.p_gen, meas.q_gen, meas.p_gen - p_d, meas.q_gen - q_d])


def extract_features(snap: MeasurementSnapshot) -> FeatureVector:
    x = feature_matrix(Measurements.from_rows([snap]))[0]
    return FeatureVector(*map(float, x), label=int(snap.label))


def apparent_loss(snap_or_meas) -> float | np.ndarray:
    """Reported generation (substation + PV) minus reported load."""
    meas = snap_or_meas
    single = isinstance(meas, MeasurementSnapshot)
    if single:
        meas = Measurements.from_rows([meas])
    lp = np.where(meas.missing, 0.0, meas.load_p)
    out = meas.p_gen + meas.pv_p.sum(axis=1) - lp.sum(axis=1)
    return float(out[0]) if single else out


# ---------------------------------------------------------------- datasets


@dataclass
class DatasetMeta:
    seed: int
    setting: str
    missing: bool
    frames: int
    attack_fraction: float
    attack_frames: int
    voltvar_anchors: list
    generator_version: str = __version__
    days: int | None = None
    minutes_per_day: int = MINUTES_PER_DAY
    profile_source: str = "synthetic"
    profile_params: dict = field(default_factory=dict)
    maxp_limit_frac: float = 0.3
    load_rescale: float = 1.0
    houses: dict = field(default_factory=dict)
    missing_frames: int = 0
    attack_missing_overlap: int = 0
    dropped_frames: list = field(default_factory=list)
    load_buses: list = field(default_factory=list)

    def to_json(self) -> dict:
        d = asdict(self)
        d["houses"] = {str(k): v for k, v in self.houses.items()}
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "DatasetMeta":
        d = dict(d)
        d.pop("type", None)
        d["houses"] = {int(k): v for k, v in d.get("houses", {}).items()}
        return cls(**d)


@dataclass
class Dataset:
    meta: DatasetMeta
    measurements: Measurements  # after meter error / missing data
    features: np.ndarray
    labels: np.ndarray
    timestamps: np.ndarray
    sim: SimResult | None = None


def select_attack_frames(n: int, seed: int, fraction: float = 0.2) -> np.ndarray:
    k = int(round(fraction * n))
    return np.sort(stream(seed, 0, TAG_SELECT).choice(n, size=k, replace=False))


def _q6(x: np.ndarray) -> np.ndarray:
    """Round-trip through the 6-decimal text format."""
    return np.char.mod("%.6f", x).astype(float)


def generate_dataset(
    model: NetworkModel,
    pvs: Sequence[PvUnit],
    setting: ScenarioSetting,
    profiles: Profiles,
    seed: int,
    missing: bool,
    out_dir=None,
    attack_frac: float = 0.2,
    cfg: SolverConfig = SolverConfig(),
    outer: OuterConfig = OuterConfig(),
    meta_extra: Mapping | None = None,
) -> Dataset:
    """Simulate, label, corrupt and (optionally) persist one dataset variant."""
    if tuple(u.mode for u in pvs) != setting.modes:
        raise ValueError(f"PV modes do not match setting {setting.id}")
    n = len(profiles)
    rows = select_attack_frames(n, seed, attack_frac)
    attacks = {
        int(i): sample_attack(setting, stream(seed, int(profiles.timestamps[i]), TAG_ATTACK), pvs[0].curve)
        for i in rows
    }
    sim = simulate(model, pvs, profiles, attacks, cfg, outer)
    dropped = np.flatnonzero(~sim.ok)
    if dropped.size:
        log.warning("%d frames dropped (power flow did not converge)", dropped.size)
    if dropped.size > 0.01 * n:
        raise SimulationError(f"{dropped.size} of {n} frames failed to converge")
    keep = np.flatnonzero(sim.ok)
    meas = corrupt(sim.measurements.take(keep), seed, missing)
    for name in ("load_p", "load_q", "pv_p", "pv_q", "p_gen", "q_gen"):
        setattr(meas, name, _q6(getattr(meas, name)))
    X = feature_matrix(meas)
    miss_frames = meas.missing.any(axis=1)
    meta = DatasetMeta(
        seed=int(seed),
        setting=setting.id,
        missing=bool(missing),
        frames=int(keep.size),
        attack_fraction=attack_frac,
        attack_frames=int(meas.labels.sum()),
        voltvar_anchors=[float(a) for a in pvs[0].curve.as_array()],
        missing_frames=int(miss_frames.sum()),
        attack_missing_overlap=int((miss_frames & (meas.labels == 1)).sum()),
        dropped_frames=[int(profiles.timestamps[i]) for i in dropped],
        load_rescale=float(profiles.rescale),
        houses=dict(profiles.houses),
        load_buses=[int(b) for b in profiles.load_buses],
    )
    for k, v in (meta_extra or {}).items():
        setattr(meta, k, v)
    ds = Dataset(meta, meas, X, meas.labels.copy(), meas.timestamps.copy(), sim)
    if out_dir is not None:
        write_dataset(ds, out_dir)
    return ds


def _fmt(a: np.ndarray) -> np.ndarray:
    return np.char.mod("%.6f", a)


def write_dataset(ds: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meas = ds.measurements
    ts = meas.timestamps.astype(str)
    lab = meas.labels.astype(str)
    feat = _fmt(ds.features)
    with open(out / "features.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(FEATURE_HEADER) + "\n")
        for i in range(len(meas)):
            fh.write(f"{ts[i]},{','.join(feat[i])},{lab[i]}\n")

    L = meas.load_p.shape[1]
    K = meas.pv_p.shape[1]
    names = [str(b) for b in (ds.meta.load_buses or range(1, L + 1))]
    header = (
        ["timestamp"] + [f"p_{b}" for b in names] + [f"q_{b}" for b in names]
        + [f"pv_p_{k}" for k in range(1, K + 1)] + [f"pv_q_{k}" for k in range(1, K + 1)]
        + ["p_gen", "q_gen"] + [f"miss_{b}" for b in names] + ["label"]
    )
    lp = _fmt(meas.load_p)
    lq = _fmt(meas.load_q)
    lp[meas.missing] = ""
    lq[meas.missing] = ""
    pvp, pvq = _fmt(meas.pv_p), _fmt(meas.pv_q)
    pg, qg = _fmt(meas.p_gen), _fmt(meas.q_gen)
    mk = meas.missing.astype(int).astype(str)
    with open(out / "snapshots.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(meas)):
            fh.write(",".join([ts[i], *lp[i], *lq[i], *pvp[i], *pvq[i], pg[i], qg[i], *mk[i], lab[i]]) + "\n")

    with open(out / "meta.jsonl", "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"type": "meta", **ds.meta.to_json()}, sort_keys=True) + "\n")
        for i in sorted(meas.attacks):
            rec = {"type": "attack", "frame": i, "timestamp": int(meas.timestamps[i]), **meas.attacks[i].to_json()}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_meta(path) -> tuple[DatasetMeta, dict[int, AttackSpec]]:
    path = Path(path)
    if path.is_dir():
        path = path / "meta.jsonl"
    meta = None
    attacks = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("type") == "meta":
                meta = DatasetMeta.from_json(rec)
            elif rec.get("type") == "attack":
                attacks[int(rec["timestamp"])] = AttackSpec.from_json(rec)
    if meta is None:
        raise ValueError(f"{path}: no meta record")
    return meta, attacks


def load_features(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (timestamps, X, labels) from a dataset directory or features.csv."""
    path = Path(path)
    if path.is_dir():
        path = path / "features.csv"
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().strip().split(",")
    if head != FEATURE_HEADER:
        raise ValueError(f"{path}: unexpected feature header")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0].astype(int), data[:, 1:7], data[:, 7].astype(int)


def load_snapshots(path) -> Measurements:
    path = Path(path)
    if path.is_dir():
        path = path / "snapshots.csv"
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        L = sum(h.startswith("p_") and not h.startswith("p_gen") for h in header)
        K = sum(h.startswith("pv_p_") for h in header)
        rows = [line.rstrip("\n").split(",") for line in fh]
    raw = np.array(rows, dtype=object)
    ts = raw[:, 0].astype(int)
    o = 1

    def num(block):
        return np.array([[float(v) if v != "" else 0.0 for v in r] for r in block], dtype=float).reshape(len(rows), -1)

    lp = num(raw[:, o:o + L]); o += L
    lq = num(raw[:, o:o + L]); o += L
    pvp = num(raw[:, o:o + K]); o += K
    pvq = num(raw[:, o:o + K]); o += K
    pg = num(raw[:, o:o + 1])[:, 0]; o += 1
    qg = num(raw[:, o:o + 1])[:, 0]; o += 1
    miss = raw[:, o:o + L].astype(int).astype(bool); o += L
    lab = raw[:, o].astype(int)
    return Measurements(ts, lp, lq, miss, pvp, pvq, pg, qg, lab, {})


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dataset_digest(out_dir) -> dict[str, str]:
    out = Path(out_dir)
    return {name: file_digest(out / name) for name in ("features.csv", "snapshots.csv", "meta.jsonl")}


def environment_seed(default: int | None = None) -> int | None:
    v = os.environ.get("PVS_SEED")
    return int(v) if v not in (None, "") else default


def params_dict(p: ProfileParams) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(p).items()}


def regenerate_dataset(dataset_dir, out_dir) -> Dataset:
    """Rebuild a synthetic-profile dataset from its meta record alone."""
    from .attack import scenario_pvs
    from .der_control import VoltVarCurve
    from .grid import default_network, default_pv_placements

    meta, _ = read_meta(dataset_dir)
    if meta.profile_source != "synthetic" or meta.days is None:
        raise ValueError("only synthetic-profile datasets regenerate from meta alone")
    params = ProfileParams(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta.profile_params.items()})
    prof = synth_profiles(meta.days, meta.minutes_per_day, meta.seed, params=params)
    setting = ScenarioSetting.get(meta.setting)
    pvs = scenario_pvs(setting, default_pv_placements(), meta.maxp_limit_frac, VoltVarCurve(*meta.voltvar_anchors))
    extra = {k: getattr(meta, k) for k in ("days", "profile_source", "profile_params", "maxp_limit_frac")}
    return generate_dataset(default_network(), pvs, setting, prof, meta.seed, meta.missing, out_dir, meta_extra=extra)
