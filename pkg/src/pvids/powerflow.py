"""Backward/forward sweep AC power flow for radial feeders.

Injections are in kW/kvar with generation positive and load negative.  All
buses are constant-power (PQ) except bus 1, which is held at 1.0 pu, angle 0.
The solver works on a batch of frames at once (bus-major arrays, one column
per frame); a frame stops updating as soon as it has converged, so a frame's
result does not depend on which other frames share the batch.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .grid import NetworkModel, radial_order

OK, NOT_CONVERGED, COLLAPSED = 0, 1, 2
COLLAPSE_VM = 0.5


class VoltageCollapseError(RuntimeError):
    """Some bus voltage fell below 0.5 pu during the sweep."""


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    max_iter: int = 100

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class InjectionSet:
    p: np.ndarray
    q: np.ndarray

    @classmethod
    def zeros(cls, n_bus: int) -> "InjectionSet":
        return cls(np.zeros(n_bus), np.zeros(n_bus))

    def check(self, model: NetworkModel) -> None:
        if np.shape(self.p) != (model.n_bus,) or np.shape(self.q) != (model.n_bus,):
            raise ValueError(f"injections must cover all {model.n_bus} buses")


@dataclass
class PowerFlowSolution:
    vm: np.ndarray
    va: np.ndarray
    p_flow: np.ndarray  # per model.branches entry, kW at the sending end
    q_flow: np.ndarray
    slack_p: float
    slack_q: float
    total_loss_p: float
    total_loss_q: float
    converged: bool
    iterations: int

    @property
    def v(self) -> np.ndarray:
        return self.vm * np.exp(1j * self.va)


@dataclass
class BatchFlow:
    """Solutions for m frames; voltage arrays are (n_bus, m)."""

    v: np.ndarray
    branch_s: np.ndarray  # (n_closed, m) kVA at the sending end, radial order
    slack_p: np.ndarray
    slack_q: np.ndarray
    loss_p: np.ndarray
    loss_q: np.ndarray
    status: np.ndarray
    iterations: np.ndarray

    @property
    def converged(self) -> np.ndarray:
        return self.status == OK


class Ladder:
    """Precomputed sweep arrays for one model (radial order, pu impedances)."""

    def __init__(self, model: NetworkModel):
        order = radial_order(model)
        self.model = model
        self.n = model.n_bus
        self.parent = [p - 1 for _, p, _ in order]
        self.child = [c - 1 for _, _, c in order]
        zb = model.z_base
        self.z = np.array([complex(br.r, br.x) / zb for br, _, _ in order])
        self.branch_ids = [br.id for br, _, _ in order]
        self.s_base_kva = model.base_mva * 1000.0

    def currents(self, s_pu: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Backward sweep: accumulated downstream current at each bus."""
        j = -np.conj(s_pu / v)
        for k in range(len(self.child) - 1, -1, -1):
            j[self.parent[k]] += j[self.child[k]]
        return j

    def voltages(self, j: np.ndarray) -> np.ndarray:
        """Forward sweep from the 1.0 pu source."""
        v = np.empty_like(j)
        v[0] = 1.0
        for k, c in enumerate(self.child):
            v[c] = v[self.parent[k]] - self.z[k] * j[c]
        return v

    def solve(self, p_kw, q_kvar, cfg: SolverConfig = SolverConfig(), v0=None) -> BatchFlow:
        p_kw = np.atleast_2d(np.asarray(p_kw, dtype=float))
        q_kvar = np.atleast_2d(np.asarray(q_kvar, dtype=float))
        if p_kw.shape[0] != self.n or q_kvar.shape != p_kw.shape:
            raise ValueError(f"injection arrays must be ({self.n}, m)")
        m = p_kw.shape[1]
        s = (p_kw + 1j * q_kvar) / self.s_base_kva
        v = np.ones((self.n, m), dtype=complex) if v0 is None else np.array(v0, dtype=complex)
        status = np.full(m, NOT_CONVERGED)
        iters = np.zeros(m, dtype=int)
        active = np.arange(m)
        with np.errstate(all="ignore"):
            for it in range(1, cfg.max_iter + 1):
                va = v[:, active]
                vn = self.voltages(self.currents(s[:, active], va))
                dv = np.max(np.abs(vn - va), axis=0)
                v[:, active] = vn
                iters[active] = it
                vmin = np.min(np.abs(vn), axis=0)
                bad = ~np.isfinite(dv) | ~(vmin >= COLLAPSE_VM)
                done = dv <= cfg.tol
                status[active[bad]] = COLLAPSED
                status[active[done & ~bad]] = OK
                active = active[~(bad | done)]
                if active.size == 0:
                    break
        with np.errstate(all="ignore"):
            j = self.currents(s, v)
            jb = j[self.child]
            branch_s = v[self.parent] * np.conj(jb) * self.s_base_kva
            slack = v[0] * np.conj(j[0]) * self.s_base_kva
            loss = (np.abs(jb) ** 2 * self.z[:, None]).sum(axis=0) * self.s_base_kva
        return BatchFlow(v, branch_s, slack.real, slack.imag, loss.real, loss.imag, status, iters)

    def to_solution(self, batch: BatchFlow, i: int = 0) -> PowerFlowSolution:
        nbr = len(self.model.branches)
        pos = {br.id: k for k, br in enumerate(self.model.branches)}
        pf = np.zeros(nbr)
        qf = np.zeros(nbr)
        for k, bid in enumerate(self.branch_ids):
            pf[pos[bid]] = batch.branch_s[k, i].real
            qf[pos[bid]] = batch.branch_s[k, i].imag
        v = batch.v[:, i]
        return PowerFlowSolution(
            vm=np.abs(v),
            va=np.angle(v),
            p_flow=pf,
            q_flow=qf,
            slack_p=float(batch.slack_p[i]),
            slack_q=float(batch.slack_q[i]),
            total_loss_p=float(batch.loss_p[i]),
            total_loss_q=float(batch.loss_q[i]),
            converged=bool(batch.status[i] == OK),
            iterations=int(batch.iterations[i]),
        )


_LADDERS: dict[int, Ladder] = {}


def ladder_for(model: NetworkModel) -> Ladder:
    key = id(model)
    lad = _LADDERS.get(key)
    if lad is None or lad.model is not model:
        lad = _LADDERS[key] = Ladder(model)
    return lad


def solve(model: NetworkModel, inj: InjectionSet, cfg: SolverConfig = SolverConfig()) -> PowerFlowSolution:
    """Solve one frame.  Returns ``converged=False`` on iteration exhaustion."""
    inj.check(model)
    lad = ladder_for(model)
    batch = lad.solve(np.asarray(inj.p)[:, None], np.asarray(inj.q)[:, None], cfg)
    if batch.status[0] == COLLAPSED:
        raise VoltageCollapseError("bus voltage below 0.5 pu")
    return lad.to_solution(batch)


def solve_batch(model: NetworkModel, p_kw, q_kvar, cfg: SolverConfig = SolverConfig(), v0=None) -> BatchFlow:
    """Solve many frames; ``p_kw``/``q_kvar`` are (n_bus, m)."""
    return ladder_for(model).solve(p_kw, q_kvar, cfg, v0)


def write_solution_csv(sol: PowerFlowSolution, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bus", "v_pu", "angle_rad"])
        for i, (vm, va) in enumerate(zip(sol.vm, sol.va), start=1):
            w.writerow([i, f"{vm:.10f}", f"{va:.10f}"])
