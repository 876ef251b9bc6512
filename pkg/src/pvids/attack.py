"""Operating-mode settings, attack sampling/application and telemetry spoofing."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .der_control import CONSTANT_PF, DEFAULT_CURVE, MAX_P, VOLT_VAR, PvOutput, PvUnit, VoltVarCurve
from .grid import PvPlacement

PF_CHANGE, MAXP_SCALE, CURVE_REPLACE = "pf_change", "maxp_scale", "curve_replace"
TAMPER_FOR_MODE = {CONSTANT_PF: PF_CHANGE, MAX_P: MAXP_SCALE, VOLT_VAR: CURVE_REPLACE}
TARGET_SIZES = (1, 2, 4)
# apparent-power rating that still leaves 44% reactive capability at rated P
Q_HEADROOM_OVERSIZE = (1 + 0.44**2) ** 0.5

SETTING_MODES = {
    "S1": (CONSTANT_PF, CONSTANT_PF, CONSTANT_PF, CONSTANT_PF),
    "S2": (MAX_P, MAX_P, MAX_P, MAX_P),
    "S3": (VOLT_VAR, VOLT_VAR, VOLT_VAR, VOLT_VAR),
    "S4": (VOLT_VAR, CONSTANT_PF, MAX_P, VOLT_VAR),
}


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSetting:
    id: str
    modes: tuple[str, ...]

    @classmethod
    def get(cls, setting_id: str) -> "ScenarioSetting":
        key = setting_id.upper()
        if key not in SETTING_MODES:
            raise ValueError(f"unknown setting {setting_id!r}; expected one of S1..S4")
        return cls(key, SETTING_MODES[key])


def scenario_pvs(
    setting: ScenarioSetting,
    placements: Sequence[PvPlacement],
    maxp_limit_frac: float = 0.3,
    curve: VoltVarCurve = DEFAULT_CURVE,
    oversize: float = Q_HEADROOM_OVERSIZE,
) -> list[PvUnit]:
    """Normal-operation PV units for a setting.

    Max P units are limited to ``maxp_limit_frac`` of their rating; constant
    PF units run at unity.
    """
    if len(placements) != len(setting.modes):
        raise ValueError("one placement per PV required")
    return [
        PvUnit(
            bus_id=pl.bus_id,
            p_rated=pl.p_rated,
            s_rated=pl.p_rated * oversize,
            mode=mode,
            pf_setpoint=1.0,
            p_limit=pl.p_rated * maxp_limit_frac if mode == MAX_P else pl.p_rated,
            curve=curve,
        )
        for pl, mode in zip(placements, setting.modes)
    ]


@dataclass(frozen=True)
class Tampering:
    kind: str
    value: float | VoltVarCurve
    variant: str = ""  # "inverted" / "arbitrary" for curve replacement

    def to_json(self) -> dict:
        if isinstance(self.value, VoltVarCurve):
            c = self.value
            return {"kind": self.kind, "variant": self.variant,
                    "curve": [c.v1, c.q1, c.v2, c.v3, c.v4, c.q4]}
        return {"kind": self.kind, "value": float(self.value)}

    @classmethod
    def from_json(cls, d: Mapping) -> "Tampering":
        if d["kind"] == CURVE_REPLACE:
            v1, q1, v2, v3, v4, q4 = d["curve"]
            return cls(CURVE_REPLACE, VoltVarCurve(v1, q1, v2, v3, v4, q4), d.get("variant", ""))
        return cls(d["kind"], float(d["value"]))


@dataclass(frozen=True)
class AttackSpec:
    """Targets are 1-based PV ids; ``tampering`` maps each target to its change."""

    targets: tuple[int, ...]
    tampering: Mapping[int, Tampering] = field(default_factory=dict)

    def __post_init__(self):
        if not self.targets:
            raise AttackError("attack needs at least one target")
        if len(self.targets) not in TARGET_SIZES:
            raise AttackError(f"attack must target 1, 2 or 4 PVs, got {len(self.targets)}")
        if set(self.targets) != set(self.tampering):
            raise AttackError("tampering must be given for exactly the targets")
        for t in self.tampering.values():
            if t.kind == MAXP_SCALE and not 0 <= t.value <= 0.8:
                raise AttackError("maxp_scale must lie in [0, 0.8]")
            if t.kind == PF_CHANGE and not 0 < abs(t.value) <= 1:
                raise AttackError("power factor magnitude must be in (0, 1]")

    def to_json(self) -> dict:
        return {
            "targets": list(self.targets),
            "tampering": {str(k): self.tampering[k].to_json() for k in self.targets},
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "AttackSpec":
        tam = {int(k): Tampering.from_json(v) for k, v in d["tampering"].items()}
        return cls(tuple(d["targets"]), tam)


@dataclass(frozen=True)
class CurveEnvelope:
    """Sampling box for arbitrary volt-var curves."""

    v_lo: float = 0.90
    v_hi: float = 1.10
    q_max: float = 0.6


def random_curve(rng: np.random.Generator, env: CurveEnvelope = CurveEnvelope()) -> VoltVarCurve:
    while True:
        v = np.sort(rng.uniform(env.v_lo, env.v_hi, size=4))
        q1, q4 = rng.uniform(-env.q_max, env.q_max, size=2)
        if v[0] < v[1] <= v[2] < v[3]:
            return VoltVarCurve(float(v[0]), float(q1), float(v[1]), float(v[2]), float(v[3]), float(q4))


def sample_attack(
    setting: ScenarioSetting,
    rng: np.random.Generator,
    base_curve: VoltVarCurve = DEFAULT_CURVE,
    envelope: CurveEnvelope = CurveEnvelope(),
) -> AttackSpec:
    n = len(setting.modes)
    sizes = [s for s in TARGET_SIZES if s <= n]
    size = sizes[rng.integers(len(sizes))]
    subsets = list(combinations(range(1, n + 1), size))
    targets = subsets[rng.integers(len(subsets))]
    tam = {}
    for t in targets:
        mode = setting.modes[t - 1]
        if mode == CONSTANT_PF:
            tam[t] = Tampering(PF_CHANGE, 0.8 if rng.random() < 0.5 else -0.8)
        elif mode == MAX_P:
            tam[t] = Tampering(MAXP_SCALE, float(rng.uniform(0.0, 0.8)))
        elif rng.random() < 0.5:
            tam[t] = Tampering(CURVE_REPLACE, base_curve.inverted(), "inverted")
        else:
            tam[t] = Tampering(CURVE_REPLACE, random_curve(rng, envelope), "arbitrary")
    return AttackSpec(tuple(targets), tam)


def apply_attack(pvs: Sequence[PvUnit], spec: AttackSpec) -> list[PvUnit]:
    """Tampered copies of ``pvs``; untargeted units are returned unchanged."""
    out = list(pvs)
    for t in spec.targets:
        if not 1 <= t <= len(pvs):
            raise AttackError(f"target PV {t} does not exist")
        unit = pvs[t - 1]
        tam = spec.tampering[t]
        if TAMPER_FOR_MODE[unit.mode] != tam.kind:
            raise AttackError(f"PV {t} in {unit.mode} mode cannot take {tam.kind}")
        if tam.kind == PF_CHANGE:
            out[t - 1] = replace(unit, pf_setpoint=float(tam.value))
        elif tam.kind == MAXP_SCALE:
            out[t - 1] = replace(unit, p_limit=float(tam.value) * unit.p_limit)
        else:
            out[t - 1] = replace(unit, curve=tam.value)
    return out


def spoof_pv_readings(counterfactual_outputs: Sequence[PvOutput]) -> list[tuple[float, float]]:
    """What a hidden attacker reports: the no-attack outputs, verbatim."""
    return [(float(o.p), float(o.q)) for o in counterfactual_outputs]
