"""Quadratic reformulation of the power-flow model with tap changers.

Every relation is a real polynomial of degree at most two.  The variable
vector and the residual share one block layout (``BLOCKS``); terminal blocks
have one entry per terminal, nodal blocks one per bus:

==========  =========  =============================================================
block       length     residual row
==========  =========  =============================================================
tau_r       T          tau_r^2 + tau_i^2 - tau^2
tau_i       T          tau (1 + n dv_inc) - 1
tau_abs     T          tau_i - tau_r (t + dt (m - m_lin))     (tangent, linearized)
m           T          m - m_target
n           T          n - n_target
u_a_r       T          Re(tau_c) u_r - Im(tau_c) u_i - u_a_r  (u = I_NT^T u_N)
u_a_i       T          Im(tau_c) u_r + Re(tau_c) u_i - u_a_i
i_a_r       T          G u_a_r - B u_a_i - i_a_r               (G + jB = rated Y_TT)
i_a_i       T          G u_a_i + B u_a_r - i_a_i
i_r         T          tau_r i_a_r + tau_i i_a_i - i_r
i_i         T          tau_r i_a_i - tau_i i_a_r - i_i
i_abs       T          i_r^2 + i_i^2 - i^2
u_r         N          Re(u conj(I_NT i + y_sh u)) - p
u_i         N          Im(u conj(I_NT i + y_sh u)) - q
u_abs       N          u_r^2 + u_i^2 - |u|^2
p_loss      1          Re(u^H (I_NT i + y_sh u)) - P_loss
==========  =========  =============================================================

Residual rows are labelled by the variable block in the same position, so
a failing row can be reported by block name and index.  ``p`` and ``q`` are
nodal injections in generator sign (scheduled value plus deviation).  The
ratio ``tau_c`` is 1 on the fixed side of every port and ``tau_rel`` on the
tap side.  Only the residual is evaluated; nothing here solves it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .network import Network
from .powerflow import PowerFlowError, PowerFlowState

BLOCKS = ("tau_r", "tau_i", "tau_abs", "m", "n", "u_a_r", "u_a_i", "i_a_r", "i_a_i",
          "i_r", "i_i", "i_abs", "u_r", "u_i", "u_abs", "p_loss")
TERMINAL_BLOCKS = BLOCKS[:12]
NODAL_BLOCKS = BLOCKS[12:15]

# descriptive row names used in reports
ROW_NAMES = {
    "tau_r": "ratio magnitude split",
    "tau_i": "in-phase identity",
    "tau_abs": "linearized tangent",
    "m": "quadrature step",
    "n": "in-phase step",
    "u_a_r": "voltage transform (real)",
    "u_a_i": "voltage transform (imag)",
    "i_a_r": "rated current (real)",
    "i_a_i": "rated current (imag)",
    "i_r": "current back-transform (real)",
    "i_i": "current back-transform (imag)",
    "i_abs": "current magnitude split",
    "u_r": "active power balance",
    "u_i": "reactive power balance",
    "u_abs": "voltage magnitude split",
    "p_loss": "loss",
}


def block_slices(net: Network) -> dict[str, slice]:
    """Position of every block in the stacked variable and residual vectors."""
    t, nb = net.n_terminal, net.n_bus
    out, start = {}, 0
    for name in BLOCKS:
        size = t if name in TERMINAL_BLOCKS else nb if name in NODAL_BLOCKS else 1
        out[name] = slice(start, start + size)
        start += size
    return out


@dataclass
class QcqpState:
    tau_r: np.ndarray
    tau_i: np.ndarray
    tau_abs: np.ndarray
    m: np.ndarray
    n: np.ndarray
    u_a_r: np.ndarray
    u_a_i: np.ndarray
    i_a_r: np.ndarray
    i_a_i: np.ndarray
    i_r: np.ndarray
    i_i: np.ndarray
    i_abs: np.ndarray
    u_r: np.ndarray
    u_i: np.ndarray
    u_abs: np.ndarray
    p_loss: float

    def check(self, net: Network) -> None:
        for name in BLOCKS[:-1]:
            want = net.n_terminal if name in TERMINAL_BLOCKS else net.n_bus
            got = np.shape(getattr(self, name))
            if got != (want,):
                raise ValueError(f"block {name}: expected shape ({want},), got {got}")

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.atleast_1d(np.asarray(getattr(self, b), float)) for b in BLOCKS])

    @classmethod
    def from_vector(cls, x: np.ndarray, net: Network) -> "QcqpState":
        sl = block_slices(net)
        x = np.asarray(x, float)
        if x.shape != (sl["p_loss"].stop,):
            raise ValueError(f"expected vector of length {sl['p_loss'].stop}, got {x.shape}")
        kw = {b: x[sl[b]].copy() for b in BLOCKS[:-1]}
        return cls(**kw, p_loss=float(x[sl["p_loss"]][0]))

    def copy(self) -> "QcqpState":
        return QcqpState(**{b: np.copy(getattr(self, b)) for b in BLOCKS[:-1]}, p_loss=self.p_loss)


@dataclass(frozen=True)
class LinearizationPoint:
    """Tangent of the quadrature angle and its slope per terminal at ``m``."""

    m: np.ndarray
    t: np.ndarray
    dt: np.ndarray
    dphi_inc: np.ndarray = field(repr=False)


def tangent_linearize(m, dphi_inc) -> LinearizationPoint:
    """``t = tan(m dphi_inc)`` and ``dt/dm = dphi_inc / cos^2(m dphi_inc)``.

    Raises ValueError if any angle reaches +-90 degrees.
    """
    m = np.atleast_1d(np.asarray(m, float))
    dphi = np.broadcast_to(np.asarray(dphi_inc, float), m.shape).copy()
    ang = m * dphi
    if np.any(np.abs(ang) >= math.pi / 2):
        raise ValueError("tangent linearization needs |m * dphi_inc| < 90 degrees")
    c = np.cos(ang)
    return LinearizationPoint(m=m.copy(), t=np.tan(ang), dt=dphi / c ** 2, dphi_inc=dphi)


def terminal_increments(net: Network) -> tuple[np.ndarray, np.ndarray]:
    """Per-terminal (dv_inc, dphi_inc); zero on the fixed side of each port."""
    dv = np.zeros(net.n_terminal)
    dphi = np.zeros(net.n_terminal)
    dv[1::2] = net.dv_inc
    dphi[1::2] = net.dphi_inc
    return dv, dphi


def terminal_steps(net: Network, n: np.ndarray, m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Expand per-port (n, m) to per-terminal arrays."""
    nt = np.zeros(net.n_terminal)
    mt = np.zeros(net.n_terminal)
    nt[1::2] = n
    mt[1::2] = m
    return nt, mt


def _nodal_current(net: Network, s: QcqpState):
    inc = net.incidence
    g, b = net.y_shunt.real, net.y_shunt.imag
    ir = inc @ s.i_r + g * s.u_r - b * s.u_i
    ii = inc @ s.i_i + g * s.u_i + b * s.u_r
    return ir, ii


def residual(state: QcqpState, net: Network, p, q, lin: LinearizationPoint, *,
             m_target=None, n_target=None, phase_factor: float = 1.0) -> np.ndarray:
    """Stacked residual of the quadratic system, laid out like ``block_slices``.

    Parameters
    ----------
    p, q : array (n_bus,)
        Nodal active and reactive injections (scheduled plus deviation).
    lin : LinearizationPoint
        Per-terminal tangent data; the quadrature row is evaluated at
        ``m - lin.m``.
    m_target, n_target : array (n_terminal,), optional
        Right-hand sides of the step identity rows; default to ``lin.m``
        and ``state.n``.
    phase_factor : float
        Multiplier on the power rows (1 in per-unit; 3 for phase
        quantities in physical units).
    """
    state.check(net)
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    if p.shape != (net.n_bus,) or q.shape != (net.n_bus,):
        raise ValueError(f"p and q must have length {net.n_bus}")
    if np.shape(lin.m) != (net.n_terminal,):
        raise ValueError(f"linearization point must have length {net.n_terminal}")
    s = state
    dv, _ = terminal_increments(net)
    m_target = lin.m if m_target is None else np.asarray(m_target, float)
    n_target = s.n if n_target is None else np.asarray(n_target, float)

    tb = net.terminal_bus
    ut_r, ut_i = s.u_r[tb], s.u_i[tb]
    yr = net.rated_blocks
    g = np.zeros((net.n_terminal, 2))
    b = np.zeros((net.n_terminal, 2))
    g[0::2], g[1::2] = yr[:, 0, :].real, yr[:, 1, :].real
    b[0::2], b[1::2] = yr[:, 0, :].imag, yr[:, 1, :].imag

    def couple(blk, x):  # Y_TT,r block-diagonal product restricted to one part
        pair = np.stack([x[0::2], x[1::2]], axis=1)
        out = np.empty(net.n_terminal)
        out[0::2] = np.sum(blk[0::2] * pair, axis=1)
        out[1::2] = np.sum(blk[1::2] * pair, axis=1)
        return out

    ir_n, ii_n = _nodal_current(net, s)
    rows = {
        "tau_r": s.tau_r ** 2 + s.tau_i ** 2 - s.tau_abs ** 2,
        "tau_i": s.tau_abs * (1.0 + s.n * dv) - 1.0,
        "tau_abs": s.tau_i - s.tau_r * (lin.t + lin.dt * (s.m - lin.m)),
        "m": s.m - m_target,
        "n": s.n - n_target,
        "u_a_r": s.tau_r * ut_r - s.tau_i * ut_i - s.u_a_r,
        "u_a_i": s.tau_i * ut_r + s.tau_r * ut_i - s.u_a_i,
        "i_a_r": couple(g, s.u_a_r) - couple(b, s.u_a_i) - s.i_a_r,
        "i_a_i": couple(g, s.u_a_i) + couple(b, s.u_a_r) - s.i_a_i,
        "i_r": s.tau_r * s.i_a_r + s.tau_i * s.i_a_i - s.i_r,
        "i_i": s.tau_r * s.i_a_i - s.tau_i * s.i_a_r - s.i_i,
        "i_abs": s.i_r ** 2 + s.i_i ** 2 - s.i_abs ** 2,
        "u_r": phase_factor * (s.u_r * ir_n + s.u_i * ii_n) - p,
        "u_i": phase_factor * (s.u_i * ir_n - s.u_r * ii_n) - q,
        "u_abs": s.u_r ** 2 + s.u_i ** 2 - s.u_abs ** 2,
        "p_loss": np.array([phase_factor * (s.u_r @ ir_n + s.u_i @ ii_n) - s.p_loss]),
    }
    return np.concatenate([rows[name] for name in BLOCKS])


def quartic_ratio_residual(state: QcqpState, net: Network) -> np.ndarray:
    """Degree-four magnitude identity ``(tau_r^2 + tau_i^2)(1 + n dv)^2 - 1`` per terminal."""
    dv, _ = terminal_increments(net)
    return (state.tau_r ** 2 + state.tau_i ** 2) * (1.0 + state.n * dv) ** 2 - 1.0


def quadratic_ratio_residual(state: QcqpState, net: Network) -> np.ndarray:
    """The two degree-two rows that replace the quartic identity, stacked."""
    dv, _ = terminal_increments(net)
    return np.concatenate([state.tau_r ** 2 + state.tau_i ** 2 - state.tau_abs ** 2,
                           state.tau_abs * (1.0 + state.n * dv) - 1.0])


def state_from_power_flow(pf: PowerFlowState, net: Network) -> QcqpState:
    """Populate every auxiliary variable from a power-flow solution."""
    n_t, m_t = terminal_steps(net, pf.n, pf.m)
    tau = net.terminal_ratios(pf.n, pf.m)
    v = pf.v
    u_a = tau * v[net.terminal_bus]
    i_a = net.rated_terminal_matrix() @ u_a
    i_t = np.conj(tau) * i_a
    nodal = net.incidence @ i_t + net.y_shunt * v
    loss = float(np.real(v @ np.conj(nodal)))
    return QcqpState(
        tau_r=tau.real.copy(), tau_i=tau.imag.copy(), tau_abs=np.abs(tau),
        m=m_t, n=n_t,
        u_a_r=u_a.real.copy(), u_a_i=u_a.imag.copy(),
        i_a_r=i_a.real.copy(), i_a_i=i_a.imag.copy(),
        i_r=i_t.real.copy(), i_i=i_t.imag.copy(), i_abs=np.abs(i_t),
        u_r=v.real.copy(), u_i=v.imag.copy(), u_abs=np.abs(v),
        p_loss=loss,
    )


@dataclass
class ResidualReport:
    blocks: dict[str, float]  # max |row| per block
    argmax: dict[str, int]  # index within the block of the largest entry
    quartic: float
    quadratic_split: float
    max_residual: float
    tolerance: float
    labels: dict[str, list] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.max_residual <= self.tolerance

    def worst_entity(self, block: str):
        """Port id / bus id / None identifying the largest row of ``block``."""
        lab = self.labels.get(block)
        return None if not lab else lab[self.argmax[block]]

    def to_dict(self) -> dict:
        return {
            "max_residual": self.max_residual,
            "tolerance": self.tolerance,
            "ok": self.ok,
            "quartic_identity": self.quartic,
            "quadratic_split": self.quadratic_split,
            "blocks": {b: {"name": ROW_NAMES[b], "max_abs": self.blocks[b],
                           "at": self.worst_entity(b)} for b in BLOCKS},
        }


def _labels(net: Network) -> dict[str, list]:
    term = []
    for p in net.ports:
        pid = p.id if p.id is not None else f"{p.bus_i}-{p.bus_j}"
        term += [(pid, "i"), (pid, "j")]
    buses = [b.id for b in net.buses]
    return {b: (term if b in TERMINAL_BLOCKS else buses if b in NODAL_BLOCKS else [None])
            for b in BLOCKS}


def verify_solution(pf: PowerFlowState, net: Network, p=None, q=None, *,
                    state: QcqpState | None = None, tolerance: float = 1e-8) -> ResidualReport:
    """Map a converged power flow into the quadratic system and report per-block residuals.

    ``p`` and ``q`` are the enforced injections; their outcome entries (slack
    P and Q, voltage-controlled Q) are free in the quadratic system and are
    taken from the solution.  When omitted, the solution's own injections
    are used.  ``state`` overrides the mapped state, which is how a
    corrupted or externally supplied state can be checked.
    """
    if not pf.converged:
        raise PowerFlowError("cannot verify an unconverged power flow")
    s = state if state is not None else state_from_power_flow(pf, net)
    p_t = np.array(pf.p_inj if p is None else p, dtype=float)
    q_t = np.array(pf.q_inj if q is None else q, dtype=float)
    free_p = [net.slack]
    free_q = np.concatenate([[net.slack], net.pv]).astype(int)
    p_t[free_p] = pf.p_inj[free_p]
    q_t[free_q] = pf.q_inj[free_q]

    _, dphi = terminal_increments(net)
    _, m_t = terminal_steps(net, pf.n, pf.m)
    lin = tangent_linearize(m_t, dphi)
    n_t, _ = terminal_steps(net, pf.n, pf.m)
    r = residual(s, net, p_t, q_t, lin, m_target=m_t, n_target=n_t)
    sl = block_slices(net)
    blocks, argmax = {}, {}
    for name in BLOCKS:
        part = np.abs(r[sl[name]])
        blocks[name] = float(part.max()) if part.size else 0.0
        argmax[name] = int(part.argmax()) if part.size else 0
    quartic = quartic_ratio_residual(s, net)
    split = quadratic_ratio_residual(s, net)
    return ResidualReport(
        blocks=blocks, argmax=argmax,
        quartic=float(np.abs(quartic).max()) if quartic.size else 0.0,
        quadratic_split=float(np.abs(split).max()) if split.size else 0.0,
        max_residual=float(np.abs(r).max()), tolerance=tolerance, labels=_labels(net),
    )
