"""Newton-Raphson AC power flow in polar coordinates."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .network import Network, TapSetting, assemble_nodal_admittance


class PowerFlowError(RuntimeError):
    pass


class SingularJacobianError(PowerFlowError):
    pass


@dataclass(frozen=True)
class Setpoints:
    """Scheduled bus quantities, per-unit.

    ``p`` is enforced at every non-slack bus, ``q`` at power-controlled
    buses and ``vm`` at the slack and voltage-controlled buses.
    """

    p: np.ndarray
    q: np.ndarray
    vm: np.ndarray


def base_setpoints(net: Network) -> Setpoints:
    return Setpoints(
        p=np.array([b.p0 for b in net.buses], dtype=float),
        q=np.array([b.q0 for b in net.buses], dtype=float),
        vm=np.array([b.v_set for b in net.buses], dtype=float),
    )


@dataclass
class PowerFlowState:
    v: np.ndarray
    i_t: np.ndarray
    p_inj: np.ndarray
    q_inj: np.ndarray
    p_loss: float  # p.u.
    converged: bool
    iterations: int
    max_mismatch: float
    n: np.ndarray = field(repr=False)
    m: np.ndarray = field(repr=False)
    base_mva: float = 100.0

    @property
    def vm(self) -> np.ndarray:
        return np.abs(self.v)

    @property
    def va(self) -> np.ndarray:
        return np.angle(self.v)

    @property
    def p_loss_mw(self) -> float:
        return self.p_loss * self.base_mva


@dataclass(frozen=True)
class PowerFlowSpec:
    tolerance: float = 1e-8
    max_iter: int = 50
    start: PowerFlowState | None = None  # None: flat start
    dense_limit: int = 400  # switch to sparse LU above this many buses

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


def terminal_currents(net: Network, settings: Mapping[int, TapSetting] | None, v: np.ndarray,
                      *, n: np.ndarray | None = None, m: np.ndarray | None = None) -> np.ndarray:
    """Terminal currents ``Y_TT @ I_NT^T @ v`` (into each port)."""
    v = np.asarray(v, dtype=complex)
    if v.shape != (net.n_bus,):
        raise ValueError(f"voltage vector must have length {net.n_bus}")
    if n is None or m is None:
        n, m = net.tap_arrays(settings)
    blocks = net.port_blocks(n, m)
    tb = net.terminal_bus
    vi, vj = v[tb[0::2]], v[tb[1::2]]
    i_t = np.empty(net.n_terminal, dtype=complex)
    i_t[0::2] = blocks[:, 0, 0] * vi + blocks[:, 0, 1] * vj
    i_t[1::2] = blocks[:, 1, 0] * vi + blocks[:, 1, 1] * vj
    return i_t


def mismatch(ybus, v: np.ndarray, setpoints: Setpoints) -> np.ndarray:
    """Complex power mismatch ``S_calc - S_sched`` at every bus."""
    s = v * np.conj(ybus @ v)
    return s - (setpoints.p + 1j * setpoints.q)


def _jacobian_dense(y, v, ibus, pvpq, pq):
    vn = v / np.abs(v)
    ds_dvm = v[:, None] * np.conj(y * vn[None, :])
    ds_dvm[np.diag_indices_from(ds_dvm)] += np.conj(ibus) * vn
    ds_dva = -1j * v[:, None] * np.conj(y * v[None, :])
    ds_dva[np.diag_indices_from(ds_dva)] += 1j * v * np.conj(ibus)
    a = ds_dva[np.ix_(pvpq, pvpq)]
    b = ds_dvm[np.ix_(pvpq, pq)]
    c = ds_dva[np.ix_(pq, pvpq)]
    d = ds_dvm[np.ix_(pq, pq)]
    return np.block([[a.real, b.real], [c.imag, d.imag]])


def _jacobian_sparse(y, v, ibus, pvpq, pq):
    vn = v / np.abs(v)
    dv = sp.diags(v)
    dvn = sp.diags(vn)
    di = sp.diags(ibus)
    ds_dvm = (dv @ (y @ dvn).conj() + di.conj() @ dvn).tocsr()
    ds_dva = (1j * dv @ (di - y @ dv).conj()).tocsr()
    a = ds_dva[pvpq][:, pvpq]
    b = ds_dvm[pvpq][:, pq]
    c = ds_dva[pq][:, pvpq]
    d = ds_dvm[pq][:, pq]
    return sp.bmat([[a.real, b.real], [c.imag, d.imag]], format="csc")


def solve_power_flow(net: Network, settings: Mapping[int, TapSetting] | None = None,
                     setpoints: Setpoints | None = None, spec: PowerFlowSpec | None = None,
                     *, n: np.ndarray | None = None, m: np.ndarray | None = None) -> PowerFlowState:
    """Solve the nodal power balance for bus voltages.

    Parameters
    ----------
    net : Network
    settings : mapping of port index to TapSetting, optional
        Tap positions; alternatively pass per-port arrays ``n`` and ``m``.
    setpoints : Setpoints, optional
        Defaults to the network's scheduled injections and voltage setpoints.
    spec : PowerFlowSpec, optional

    Returns
    -------
    PowerFlowState
        ``converged`` is False when the mismatch is still above tolerance
        after ``max_iter`` iterations or the iteration diverged.

    Raises
    ------
    SingularJacobianError
        If a Newton step cannot be solved.
    """
    spec = spec or PowerFlowSpec()
    setpoints = setpoints or base_setpoints(net)
    if n is None or m is None:
        n, m = net.tap_arrays(settings)
    ybus = assemble_nodal_admittance(net, n=n, m=m)
    dense = net.n_bus <= spec.dense_limit
    y = ybus.toarray() if dense else ybus

    pv, pq, slack = net.pv, net.pq, net.slack
    pvpq = np.concatenate([pv, pq])
    fixed_vm = np.concatenate([[slack], pv]).astype(int)

    if spec.start is None:
        va = np.zeros(net.n_bus)
        vm = np.ones(net.n_bus)
    else:
        va = np.angle(spec.start.v) - np.angle(spec.start.v[slack])
        vm = np.abs(spec.start.v).copy()
    vm[fixed_vm] = setpoints.vm[fixed_vm]
    va[slack] = 0.0
    v = vm * np.exp(1j * va)
    s_sched = setpoints.p + 1j * setpoints.q
    npvpq = len(pvpq)

    it = 0
    converged = False
    while True:
        ibus = y @ v
        mis = v * np.conj(ibus) - s_sched
        f = np.concatenate([mis[pvpq].real, mis[pq].imag])
        norm = np.max(np.abs(f)) if len(f) else 0.0
        if not np.isfinite(norm):
            break
        if norm <= spec.tolerance:
            converged = True
            break
        if it >= spec.max_iter:
            break
        if dense:
            jac = _jacobian_dense(y, v, ibus, pvpq, pq)
            try:
                dx = np.linalg.solve(jac, -f)
            except np.linalg.LinAlgError as exc:
                raise SingularJacobianError(str(exc)) from exc
        else:
            jac = _jacobian_sparse(y, v, ibus, pvpq, pq)
            with warnings.catch_warnings():
                warnings.simplefilter("error", spla.MatrixRankWarning)
                try:
                    dx = spla.spsolve(jac, -f)
                except spla.MatrixRankWarning as exc:
                    raise SingularJacobianError(str(exc)) from exc
        it += 1
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        v = vm * np.exp(1j * va)

    ibus = ybus @ v
    s = v * np.conj(ibus)
    i_t = terminal_currents(net, None, v, n=n, m=m)
    return PowerFlowState(
        v=v, i_t=i_t, p_inj=s.real, q_inj=s.imag,
        p_loss=float(np.sum(s.real)), converged=converged, iterations=it,
        max_mismatch=float(norm), n=np.asarray(n).copy(), m=np.asarray(m).copy(),
        base_mva=net.base_mva,
    )


def total_losses(state: PowerFlowState, net: Network, power_factor: float = 1.0) -> float:
    """Active losses in MW from the nodal product ``v^T conj(I_NT i_T)``.

    Fixed bus shunts contribute ``Re(y_sh) |v|^2``.
    """
    if not state.converged:
        raise PowerFlowError("losses of an unconverged power flow are undefined")
    nodal = net.incidence @ state.i_t + net.y_shunt * state.v
    loss = power_factor * np.real(state.v @ np.conj(nodal))
    return float(loss) * net.base_mva


def branch_losses(state: PowerFlowState, net: Network) -> np.ndarray:
    """Active loss of each port in p.u.: ``Re(V_i conj(I_i) + V_j conj(I_j))``."""
    vt = state.v[net.terminal_bus]
    s = vt * np.conj(state.i_t)
    return s[0::2].real + s[1::2].real


def shunt_losses(state: PowerFlowState, net: Network) -> np.ndarray:
    return net.y_shunt.real * np.abs(state.v) ** 2
