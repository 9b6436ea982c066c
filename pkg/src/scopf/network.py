"""Grid topology, transformer tap model and admittance assembly.

Every two-port (line or transformer) is stored as a T-equivalent circuit
with series admittances ``y_i`` (higher-voltage side), ``y_j`` (lower-voltage
side, referred to side i) and the shunt ``y_s`` at the centre node, followed
by an ideal transformer with complex ratio ``tau`` at terminal j.  All values
are per-unit on the network's MVA base.

Terminal ordering: port ``k`` owns terminal ``2k`` (side i) and ``2k + 1``
(side j).  Terminal currents are counted positive flowing from the bus into
the port, so the nodal admittance matrix is ``I_NT @ Y_TT @ I_NT.T`` with
``I_NT[bus, terminal] = 1``.
"""
from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class NetworkError(ValueError):
    """Raised for electrically or topologically invalid network data."""


class BusKind(str, enum.Enum):
    SLACK = "slack"
    VOLTAGE_CONTROLLED = "voltage_controlled"
    POWER_CONTROLLED = "power_controlled"


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    v_rated: float  # kV
    p0: float = 0.0  # net scheduled active injection, p.u. (generation positive)
    q0: float = 0.0
    v_min: float = 0.9
    v_max: float = 1.1
    v_set: float = 1.0  # magnitude setpoint for slack / voltage-controlled buses
    y_shunt: complex = 0j  # fixed shunt admittance to ground, p.u.

    def __post_init__(self):
        if not self.v_min < self.v_max:
            raise NetworkError(f"bus {self.id}: v_min must be below v_max")
        if self.v_rated <= 0:
            raise NetworkError(f"bus {self.id}: rated voltage must be positive")


@dataclass(frozen=True)
class TapSpec:
    """Integer step ranges and step sizes of one tap changer.

    The null spec (all bounds and increments zero) describes a terminal
    without voltage control.
    """

    n_min: int = 0
    n_max: int = 0
    m_min: int = 0
    m_max: int = 0
    dv_inc: float = 0.0
    dphi_inc: float = 0.0  # rad

    def __post_init__(self):
        if not (self.n_min <= 0 <= self.n_max and self.m_min <= 0 <= self.m_max):
            raise NetworkError("tap ranges must contain the zero step")

    @property
    def is_null(self) -> bool:
        return self.n_min == self.n_max == self.m_min == self.m_max == 0

    @property
    def in_phase(self) -> bool:
        return self.n_min != self.n_max

    @property
    def quadrature(self) -> bool:
        return self.m_min != self.m_max

    def contains(self, setting: "TapSetting") -> bool:
        return (self.n_min <= setting.n <= self.n_max
                and self.m_min <= setting.m <= self.m_max)


NULL_TAP = TapSpec()


@dataclass(frozen=True)
class TapSetting:
    n: int = 0
    m: int = 0


@dataclass(frozen=True)
class TwoPort:
    bus_i: int
    bus_j: int
    y_i: complex
    y_j: complex
    y_s: complex = 0j
    rated_ratio: complex = 1 + 0j
    vector_group: int = 0
    tap: TapSpec = NULL_TAP
    i_max: float = math.inf  # p.u.
    transformer: bool = False
    id: int | None = None

    def __post_init__(self):
        if not self.i_max > 0:
            raise NetworkError(f"port {self.id}: i_max must be positive")
        if not self.transformer:
            if self.rated_ratio != 1 or self.vector_group != 0 or not self.tap.is_null:
                raise NetworkError(f"port {self.id}: a line has unit ratio and no tap")
        if self.y_i + self.y_j + self.y_s == 0:
            raise NetworkError(f"port {self.id}: singular T-equivalent")

    @cached_property
    def rated_admittance(self) -> np.ndarray:
        """2x2 terminal admittance at the rated ratio (no relative tap)."""
        return _t_equivalent(self.y_i, self.y_j, self.y_s, self.rated_ratio)


def _t_equivalent(y_i, y_j, y_s, tau):
    d = y_i + y_j + y_s
    if d == 0:
        raise NetworkError("singular T-equivalent: y_i + y_j + y_s = 0")
    return np.array([
        [y_i * (y_j + y_s), -tau * y_i * y_j],
        [-np.conj(tau) * y_i * y_j, abs(tau) ** 2 * y_j * (y_i + y_s)],
    ], dtype=complex) / d


def rated_ratio(v_i_rated: float, v_j_rated: float, k: int = 0) -> complex:
    """Rated complex ratio from rated voltages (kV) and vector group number."""
    if v_i_rated <= 0 or v_j_rated <= 0:
        raise NetworkError("rated voltages must be positive")
    if not v_i_rated > v_j_rated:
        raise NetworkError("transformer side i must carry the higher rated voltage")
    if int(k) != k or not 0 <= k <= 11:
        raise NetworkError(f"vector group number must be an integer in [0, 11], got {k}")
    return v_i_rated / v_j_rated * cmath.exp(1j * math.radians(30 * k))


def tap_ratio(spec: TapSpec, setting: TapSetting) -> complex:
    """Relative ratio exp(j m dphi) / (1 + n dv) of a tap position."""
    if not spec.contains(setting):
        raise NetworkError(f"tap setting {setting} outside {spec}")
    den = 1.0 + setting.n * spec.dv_inc
    if den == 0:
        raise NetworkError("degenerate tap: 1 + n * dv_inc = 0")
    return cmath.exp(1j * setting.m * spec.dphi_inc) / den


def terminal_admittance(port: TwoPort, setting: TapSetting = TapSetting()) -> np.ndarray:
    """Terminal admittance ``conj(T) @ Y_r @ T`` with ``T = diag(1, tau_rel)``."""
    t = np.diag([1.0 + 0j, tap_ratio(port.tap, setting)])
    return np.conj(t) @ port.rated_admittance @ t


def pi_to_t(r: float, x: float, b: float = 0.0) -> tuple[complex, complex, complex]:
    """Exact star-delta conversion of a symmetric pi branch into a T-equivalent.

    The pi branch has series impedance ``r + jx`` and total charging ``b``
    split evenly on both ends.  With ``y = 1/(r + jx)`` and ``h = jb/2``::

        y_i = y_j = 2 y + h,   y_s = 2 h + h**2 / y

    which reduces to ``(2y, 2y, 0)`` for an uncharged branch.
    """
    z = complex(r, x)
    if z == 0:
        raise NetworkError("zero series impedance cannot be converted")
    y = 1 / z
    h = 0.5j * b
    return 2 * y + h, 2 * y + h, 2 * h + h * h / y


@dataclass(frozen=True, eq=False)
class Network:
    buses: tuple[Bus, ...]
    ports: tuple[TwoPort, ...]
    base_mva: float = 100.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "ports", tuple(self.ports))
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate bus ids")
        slack = [b.id for b in self.buses if b.kind == BusKind.SLACK]
        if len(slack) != 1:
            raise NetworkError(f"exactly one slack bus required, found {slack}")
        for p in self.ports:
            for b in (p.bus_i, p.bus_j):
                if b not in self.index:
                    raise NetworkError(f"port {p.id} references unknown bus {b}")
            if p.bus_i == p.bus_j:
                raise NetworkError(f"port {p.id} connects bus {p.bus_i} to itself")
        if self.n_bus > 1:
            n_comp, _ = connected_components(self._adjacency, directed=False)
            if n_comp != 1:
                raise NetworkError(f"network is not connected ({n_comp} islands)")

    # -- topology ---------------------------------------------------------
    @cached_property
    def index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_port(self) -> int:
        return len(self.ports)

    @property
    def n_terminal(self) -> int:
        return 2 * len(self.ports)

    @cached_property
    def terminal_bus(self) -> np.ndarray:
        """Bus index of every terminal (length 2 * n_port)."""
        out = np.empty(self.n_terminal, dtype=int)
        for k, p in enumerate(self.ports):
            out[2 * k] = self.index[p.bus_i]
            out[2 * k + 1] = self.index[p.bus_j]
        return out

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Node-terminal incidence matrix, one +1 per terminal column."""
        nt = self.n_terminal
        return sp.csr_matrix((np.ones(nt), (self.terminal_bus, np.arange(nt))),
                             shape=(self.n_bus, nt))

    @cached_property
    def _adjacency(self):
        i = self.terminal_bus[0::2]
        j = self.terminal_bus[1::2]
        return sp.coo_matrix((np.ones(len(i)), (i, j)), shape=(self.n_bus, self.n_bus))

    @cached_property
    def slack(self) -> int:
        return next(k for k, b in enumerate(self.buses) if b.kind == BusKind.SLACK)

    @cached_property
    def pv(self) -> np.ndarray:
        return np.array([k for k, b in enumerate(self.buses)
                         if b.kind == BusKind.VOLTAGE_CONTROLLED], dtype=int)

    @cached_property
    def pq(self) -> np.ndarray:
        return np.array([k for k, b in enumerate(self.buses)
                         if b.kind == BusKind.POWER_CONTROLLED], dtype=int)

    @cached_property
    def tap_ports(self) -> np.ndarray:
        """Indices of ports with a non-null tap changer."""
        return np.array([k for k, p in enumerate(self.ports) if not p.tap.is_null], dtype=int)

    # -- per-port parameter arrays ----------------------------------------
    @cached_property
    def rated_blocks(self) -> np.ndarray:
        """Stacked rated 2x2 terminal admittances, shape (n_port, 2, 2)."""
        if not self.ports:
            return np.zeros((0, 2, 2), dtype=complex)
        return np.stack([p.rated_admittance for p in self.ports])

    @cached_property
    def dv_inc(self) -> np.ndarray:
        return np.array([p.tap.dv_inc for p in self.ports], dtype=float)

    @cached_property
    def dphi_inc(self) -> np.ndarray:
        return np.array([p.tap.dphi_inc for p in self.ports], dtype=float)

    @cached_property
    def i_max(self) -> np.ndarray:
        """Current limit per terminal (both terminals share the port limit)."""
        return np.repeat([p.i_max for p in self.ports], 2).astype(float)

    @cached_property
    def y_shunt(self) -> np.ndarray:
        return np.array([b.y_shunt for b in self.buses], dtype=complex)

    @cached_property
    def v_min(self) -> np.ndarray:
        return np.array([b.v_min for b in self.buses])

    @cached_property
    def v_max(self) -> np.ndarray:
        return np.array([b.v_max for b in self.buses])

    def tap_arrays(self, settings: Mapping[int, TapSetting] | None = None):
        """Per-port integer arrays ``(n, m)``; ports missing from ``settings`` sit at 0."""
        n = np.zeros(self.n_port, dtype=int)
        m = np.zeros(self.n_port, dtype=int)
        for k, s in (settings or {}).items():
            port = self.ports[k]
            if not port.tap.contains(s):
                raise NetworkError(f"port {port.id}: tap setting {s} outside {port.tap}")
            n[k], m[k] = s.n, s.m
        return n, m

    def relative_ratios(self, n: np.ndarray, m: np.ndarray) -> np.ndarray:
        """tau_rel per port for integer step arrays."""
        den = 1.0 + n * self.dv_inc
        if np.any(den == 0):
            raise NetworkError("degenerate tap: 1 + n * dv_inc = 0")
        return np.exp(1j * m * self.dphi_inc) / den

    def terminal_ratios(self, n: np.ndarray, m: np.ndarray) -> np.ndarray:
        """Diagonal of the block-diagonal tap changing matrix (length n_terminal)."""
        t = np.ones(self.n_terminal, dtype=complex)
        t[1::2] = self.relative_ratios(n, m)
        return t

    def port_blocks(self, n: np.ndarray, m: np.ndarray) -> np.ndarray:
        """Tap-adjusted 2x2 terminal admittances, shape (n_port, 2, 2)."""
        tau = self.relative_ratios(n, m)
        y = self.rated_blocks.copy()
        y[:, 0, 1] *= tau
        y[:, 1, 0] *= np.conj(tau)
        y[:, 1, 1] *= np.abs(tau) ** 2
        return y

    def terminal_matrix(self, n: np.ndarray, m: np.ndarray) -> sp.csr_matrix:
        """Block-diagonal terminal admittance matrix Y_TT."""
        return _block_diag(self.port_blocks(n, m))

    def rated_terminal_matrix(self) -> sp.csr_matrix:
        return _block_diag(self.rated_blocks)


def _block_diag(blocks: np.ndarray) -> sp.csr_matrix:
    p = len(blocks)
    base = 2 * np.arange(p)
    rows = np.concatenate([base, base, base + 1, base + 1])
    cols = np.concatenate([base, base + 1, base, base + 1])
    data = np.concatenate([blocks[:, 0, 0], blocks[:, 0, 1], blocks[:, 1, 0], blocks[:, 1, 1]])
    return sp.csr_matrix((data, (rows, cols)), shape=(2 * p, 2 * p))


def assemble_nodal_admittance(net: Network, settings: Mapping[int, TapSetting] | None = None,
                              *, n: np.ndarray | None = None,
                              m: np.ndarray | None = None) -> sp.csr_matrix:
    """Nodal admittance matrix ``I_NT Y_TT I_NT^T`` plus fixed bus shunts.

    Tap positions come either from ``settings`` (port index -> TapSetting)
    or directly as per-port step arrays ``n`` and ``m``.
    """
    if n is None or m is None:
        n, m = net.tap_arrays(settings)
    blocks = net.port_blocks(n, m)
    tb = net.terminal_bus
    fi, fj = tb[0::2], tb[1::2]
    rows = np.concatenate([fi, fi, fj, fj, np.arange(net.n_bus)])
    cols = np.concatenate([fi, fj, fi, fj, np.arange(net.n_bus)])
    data = np.concatenate([blocks[:, 0, 0], blocks[:, 0, 1], blocks[:, 1, 0], blocks[:, 1, 1],
                           net.y_shunt])
    return sp.csr_matrix((data, (rows, cols)), shape=(net.n_bus, net.n_bus))


def settings_from_arrays(net: Network, n: Sequence[int], m: Sequence[int]) -> dict[int, TapSetting]:
    return {int(k): TapSetting(int(n[k]), int(m[k])) for k in net.tap_ports}
