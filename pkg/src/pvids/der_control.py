"""PV inverter output under Max P, constant power factor and volt-var control.

Sign convention: positive q is reactive power injected into the grid
(capacitive, "lead"); negative q is absorbed ("lag").  A signed power factor
carries the same convention: ``pf=+0.8`` injects, ``pf=-0.8`` absorbs.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .grid import NetworkModel
from .powerflow import OK, BatchFlow, InjectionSet, PowerFlowSolution, SolverConfig, ladder_for

MAX_P, CONSTANT_PF, VOLT_VAR = "MaxP", "ConstantPF", "VoltVar"
MODES = (MAX_P, CONSTANT_PF, VOLT_VAR)


@dataclass(frozen=True)
class VoltVarCurve:
    """Piecewise-linear volt-var characteristic with a deadband on [v2, v3].

    ``q1``/``q4`` are fractions of the inverter kVA rating applied at and
    beyond ``v1``/``v4``; the output is zero between ``v2`` and ``v3``.
    """

    v1: float = 0.92
    q1: float = 0.44
    v2: float = 0.98
    v3: float = 1.02
    v4: float = 1.08
    q4: float = -0.44

    def __post_init__(self):
        if not (self.v1 < self.v2 <= self.v3 < self.v4):
            raise ValueError("volt-var anchors must satisfy v1 < v2 <= v3 < v4")

    @property
    def normal(self) -> bool:
        return self.q1 >= 0 >= self.q4

    def inverted(self) -> "VoltVarCurve":
        return replace(self, q1=-self.q1, q4=-self.q4)

    def as_array(self) -> np.ndarray:
        return np.array([self.v1, self.q1, self.v2, self.v3, self.v4, self.q4])

    def frac(self, v):
        return curve_fraction(self.as_array(), v)


DEFAULT_CURVE = VoltVarCurve()


def curve_fraction(curve: np.ndarray, v):
    """Vectorised curve evaluation; ``curve[..., :]`` is (v1, q1, v2, v3, v4, q4)."""
    v1, q1, v2, v3, v4, q4 = (curve[..., i] for i in range(6))
    v = np.asarray(v, dtype=float)
    low = q1 * np.clip((v2 - v) / (v2 - v1), 0.0, 1.0)
    high = q4 * np.clip((v - v3) / (v4 - v3), 0.0, 1.0)
    return np.where(v < v2, low, np.where(v > v3, high, 0.0))


@dataclass(frozen=True)
class PvUnit:
    bus_id: int
    p_rated: float
    s_rated: float | None = None
    mode: str = MAX_P
    pf_setpoint: float = 1.0
    p_limit: float | None = None
    curve: VoltVarCurve = DEFAULT_CURVE

    def __post_init__(self):
        if self.s_rated is None:
            object.__setattr__(self, "s_rated", self.p_rated)
        if self.p_limit is None:
            object.__setattr__(self, "p_limit", self.p_rated)
        if self.mode not in MODES:
            raise ValueError(f"unknown PV mode {self.mode!r}")
        if not 0 < self.p_rated <= self.s_rated:
            raise ValueError("need 0 < p_rated <= s_rated")
        if not 0 <= self.p_limit <= self.p_rated:
            raise ValueError("need 0 <= p_limit <= p_rated")
        if not 0 < abs(self.pf_setpoint) <= 1:
            raise ValueError("power factor magnitude must be in (0, 1]")


class PvOutput(NamedTuple):
    p: float
    q: float


def _clip_circle(p, q, s_rated):
    p = np.minimum(p, s_rated)
    qmax = np.sqrt(np.maximum(s_rated**2 - p**2, 0.0))
    return p, np.clip(q, -qmax, qmax)


def output_max_p(p_available: float, p_limit: float) -> PvOutput:
    if p_available < 0:
        raise ValueError("available power must be non-negative")
    return PvOutput(float(min(p_available, p_limit)), 0.0)


def pf_ratio(pf) -> np.ndarray:
    """Signed q/p ratio for a signed power factor."""
    pf = np.asarray(pf, dtype=float)
    if np.any(pf == 0) or np.any(np.abs(pf) > 1):
        raise ValueError("power factor magnitude must be in (0, 1]")
    return np.sign(pf) * np.sqrt(1.0 - pf**2) / np.abs(pf)


def output_constant_pf(p_available: float, pf: float, s_rated: float = np.inf) -> PvOutput:
    if p_available < 0:
        raise ValueError("available power must be non-negative")
    p = min(p_available, s_rated)
    p, q = _clip_circle(p, p * pf_ratio(pf), s_rated)
    return PvOutput(float(p), float(q))


def voltvar_q(curve: VoltVarCurve, v: float, s_rated: float, p: float) -> float:
    if v <= 0:
        raise ValueError("voltage must be positive")
    _, q = _clip_circle(p, s_rated * curve.frac(v), s_rated)
    return float(q)


def pv_output(unit: PvUnit, p_available: float, v: float = 1.0) -> PvOutput:
    """Output of a single unit at a given PCC voltage."""
    if unit.mode == MAX_P:
        return output_max_p(p_available, min(unit.p_limit, unit.s_rated))
    if unit.mode == CONSTANT_PF:
        return output_constant_pf(p_available, unit.pf_setpoint, unit.s_rated)
    p = min(p_available, unit.s_rated)
    return PvOutput(float(p), voltvar_q(unit.curve, v, unit.s_rated, p))


@dataclass
class Fleet:
    """Per-frame PV parameters for a batch: k units by m frames."""

    bus_idx: np.ndarray  # (k,) zero-based bus index
    s_rated: np.ndarray  # (k,)
    modes: tuple[str, ...]
    pf: np.ndarray  # (k, m)
    p_limit: np.ndarray  # (k, m)
    curve: np.ndarray  # (k, m, 6)

    @classmethod
    def stack(cls, frames: Sequence[Sequence[PvUnit]]) -> "Fleet":
        first = frames[0]
        for units in frames:
            if [(u.bus_id, u.mode, u.s_rated) for u in units] != [
                (u.bus_id, u.mode, u.s_rated) for u in first
            ]:
                raise ValueError("all frames must share PV placement and modes")
        return cls(
            bus_idx=np.array([u.bus_id - 1 for u in first]),
            s_rated=np.array([u.s_rated for u in first], dtype=float),
            modes=tuple(u.mode for u in first),
            pf=np.array([[u.pf_setpoint for u in units] for units in frames], dtype=float).T.copy(),
            p_limit=np.array([[u.p_limit for u in units] for units in frames], dtype=float).T.copy(),
            curve=np.array([[u.curve.as_array() for u in units] for units in frames]).transpose(1, 0, 2).copy(),
        )

    @classmethod
    def broadcast(cls, units: Sequence[PvUnit], m: int) -> "Fleet":
        one = cls.stack([units])
        return cls(
            one.bus_idx,
            one.s_rated,
            one.modes,
            np.repeat(one.pf, m, axis=1),
            np.repeat(one.p_limit, m, axis=1),
            np.repeat(one.curve, m, axis=1),
        )

    def subset(self, cols) -> "Fleet":
        return Fleet(self.bus_idx, self.s_rated, self.modes, self.pf[:, cols], self.p_limit[:, cols], self.curve[:, cols])

    @property
    def voltvar(self) -> np.ndarray:
        return np.array([m == VOLT_VAR for m in self.modes])


def fixed_outputs(fleet: Fleet, p_avail: np.ndarray):
    """P for every unit and Q for the voltage-independent ones, (k, m) each."""
    s = fleet.s_rated[:, None]
    p_avail = np.maximum(np.asarray(p_avail, dtype=float), 0.0)
    p = np.minimum(p_avail, s)
    q = np.zeros_like(p)
    for i, mode in enumerate(fleet.modes):
        if mode == MAX_P:
            p[i] = np.minimum(p[i], fleet.p_limit[i])
        elif mode == CONSTANT_PF:
            p[i], q[i] = _clip_circle(p[i], p[i] * pf_ratio(fleet.pf[i]), s[i])
    return p, q


def voltvar_targets(fleet: Fleet, p: np.ndarray, vm: np.ndarray) -> np.ndarray:
    s = fleet.s_rated[:, None]
    _, q = _clip_circle(p, s * curve_fraction(fleet.curve, vm), s)
    return q


@dataclass(frozen=True)
class OuterConfig:
    tol_q: float = 0.01  # kvar
    max_outer: int = 200
    damping: float = 0.5

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError("damping must be in (0, 1]")
        if self.tol_q <= 0 or self.max_outer < 1:
            raise ValueError("tol_q > 0 and max_outer >= 1 required")


@dataclass
class FleetFlow:
    flow: BatchFlow
    p: np.ndarray  # (k, m) kW
    q: np.ndarray  # (k, m) kvar
    outer_iterations: np.ndarray
    outer_converged: np.ndarray
    residual: np.ndarray  # (m,) max |q - curve(V)| over volt-var units

    @property
    def ok(self) -> np.ndarray:
        return self.flow.converged & self.outer_converged


def _scatter(dst: BatchFlow, src: BatchFlow, cols) -> None:
    dst.v[:, cols] = src.v
    dst.branch_s[:, cols] = src.branch_s
    for name in ("slack_p", "slack_q", "loss_p", "loss_q", "status", "iterations"):
        getattr(dst, name)[cols] = getattr(src, name)


def solve_fleet(
    model: NetworkModel,
    base_p: np.ndarray,
    base_q: np.ndarray,
    fleet: Fleet,
    p_avail: np.ndarray,
    cfg: SolverConfig = SolverConfig(),
    outer: OuterConfig = OuterConfig(),
) -> FleetFlow:
    """Batched power flow with PV units; volt-var units solved by damped substitution."""
    lad = ladder_for(model)
    base_p = np.atleast_2d(base_p)
    base_q = np.atleast_2d(base_q)
    m = base_p.shape[1]
    p, q = fixed_outputs(fleet, p_avail)
    vv = fleet.voltvar

    def injections(qq, cols):
        bp = base_p[:, cols].copy()
        bq = base_q[:, cols].copy()
        np.add.at(bp, fleet.bus_idx, p[:, cols])
        np.add.at(bq, fleet.bus_idx, qq)
        return bp, bq

    allc = np.arange(m)
    flow = lad.solve(*injections(q, allc), cfg)
    outer_it = np.zeros(m, dtype=int)
    outer_ok = np.ones(m, dtype=bool)
    residual = np.zeros(m)
    if not vv.any():
        return FleetFlow(flow, p, q, outer_it, outer_ok, residual)

    vvi = np.flatnonzero(vv)
    # first guess: full substitution from the zero-Q solution
    q[vvi] = voltvar_targets(_rows(fleet, vvi), p[vvi], np.abs(flow.v[fleet.bus_idx[vvi]]))
    outer_ok[:] = False
    active = allc[flow.converged]
    # per-frame step; halved whenever the residual grows (steep curve segments)
    alpha = np.full(m, outer.damping)
    prev = np.full(m, np.inf)
    for it in range(1, outer.max_outer + 1):
        if active.size == 0:
            break
        part = lad.solve(*injections(q[:, active], active), cfg, v0=flow.v[:, active])
        _scatter(flow, part, active)
        outer_it[active] = it
        good = part.status == OK
        fa = _rows(fleet.subset(active), vvi)
        target = voltvar_targets(fa, p[np.ix_(vvi, active)], np.abs(part.v[fleet.bus_idx[vvi]]))
        qa = q[np.ix_(vvi, active)]
        res = np.max(np.abs(qa - target), axis=0)
        residual[active] = res
        done = good & (res <= outer.tol_q)
        outer_ok[active[done]] = True
        grew = res > prev[active]
        alpha[active[grew]] = np.maximum(alpha[active[grew]] * 0.5, 1e-4)
        prev[active] = res
        step = qa + alpha[active] * (target - qa)
        keep = good & ~done
        q[np.ix_(vvi, active[keep])] = step[:, keep]
        active = active[keep]
    return FleetFlow(flow, p, q, outer_it, outer_ok, residual)


def _rows(fleet: Fleet, idx) -> Fleet:
    return Fleet(
        fleet.bus_idx[idx],
        fleet.s_rated[idx],
        tuple(fleet.modes[i] for i in idx),
        fleet.pf[idx],
        fleet.p_limit[idx],
        fleet.curve[idx],
    )


class VoltVarResult(NamedTuple):
    solution: PowerFlowSolution
    outputs: list[PvOutput]
    outer_iterations: int
    converged: bool


def solve_with_voltvar(
    model: NetworkModel,
    base_inj: InjectionSet,
    pvs: Sequence[PvUnit],
    p_available: Sequence[float],
    cfg: SolverConfig = SolverConfig(),
    outer: OuterConfig = OuterConfig(),
) -> VoltVarResult:
    """Single-frame solve with PV units attached at their buses.

    ``converged`` is False when the outer loop ran out of iterations; the last
    iterate is returned in that case.
    """
    base_inj.check(model)
    if len(p_available) != len(pvs):
        raise ValueError("one available-power value per PV unit")
    if any(pa < 0 for pa in p_available):
        raise ValueError("available power must be non-negative")
    fleet = Fleet.stack([pvs])
    res = solve_fleet(
        model,
        np.asarray(base_inj.p, dtype=float)[:, None],
        np.asarray(base_inj.q, dtype=float)[:, None],
        fleet,
        np.asarray(p_available, dtype=float)[:, None],
        cfg,
        outer,
    )
    sol = ladder_for(model).to_solution(res.flow)
    outputs = [PvOutput(float(pp), float(qq)) for pp, qq in zip(res.p[:, 0], res.q[:, 0])]
    return VoltVarResult(sol, outputs, int(res.outer_iterations[0]), bool(res.outer_converged[0]))
