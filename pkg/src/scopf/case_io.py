"""Case file ingestion and result export.

Two input formats are understood:

* the native JSON case format (``"format": "scopf-case"``, version 1),
  documented in ``docs/case_format.md``;
* the MATPOWER ``mpc`` text subset (``baseMVA``, ``bus``, ``gen``,
  ``branch``), read-only.

Both parse into a :class:`CaseDocument`, which is the canonical native
document with every default filled in.
"""
from __future__ import annotations

import copy
import csv
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Any

import numpy as np

from .network import (BusKind, Bus, Network, NetworkError, TapSpec, TwoPort, NULL_TAP,
                      pi_to_t, rated_ratio)
from .problem import Resource, ScopfConfig

FORMAT_NAME = "scopf-case"
FORMAT_VERSION = 1

# default limits for fields a case leaves out
DEFAULT_V_MIN = 0.9
DEFAULT_V_MAX = 1.1
DEFAULT_TAP = {"n_min": -10, "n_max": 10, "m_min": -10, "m_max": 10,
               "dv_inc": 0.0025, "dphi_inc_deg": 1.0}

BUILTIN_CASES = {
    "ieee118": "case118.m",
    "ieee118-table2": "ieee118_table2.json",
}


class CaseFormatError(ValueError):
    """Malformed case text; carries line/column for syntax errors."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None,
                 entity: str | None = None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if column is not None:
            loc.append(f"column {column}")
        if entity is not None:
            loc.append(entity)
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.line = line
        self.column = column
        self.entity = entity


@dataclass
class CaseDocument:
    base_mva: float
    buses: list[dict]
    branches: list[dict]
    resources: list[dict]
    scenario: dict = field(default_factory=lambda: {"in_phase_taps": True,
                                                    "quadrature_taps": True})
    costs: dict = field(default_factory=lambda: {"c_loss": 1.0, "redispatch": "signed"})
    name: str = ""

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "name": self.name,
            "base_mva": self.base_mva,
            "scenario": dict(self.scenario),
            "costs": dict(self.costs),
            "buses": copy.deepcopy(self.buses),
            "branches": copy.deepcopy(self.branches),
            "resources": copy.deepcopy(self.resources),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def with_scenario(self, scenario: int) -> "CaseDocument":
        """Copy with the scenario flags of benchmark scenario 1, 2 or 3.

        1: no tap control; 2: in-phase steps only; 3: in-phase and quadrature.
        """
        if scenario not in (1, 2, 3):
            raise ValueError(f"scenario must be 1, 2 or 3, got {scenario}")
        doc = copy.deepcopy(self)
        doc.scenario = {"in_phase_taps": scenario >= 2, "quadrature_taps": scenario == 3}
        return doc


# ---------------------------------------------------------------------------
# parsing

def parse_case(text: str) -> CaseDocument:
    """Parse native JSON or MATPOWER text into a validated CaseDocument."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CaseFormatError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None
        return _from_native(raw)
    if re.search(r"^\s*mpc\.\w+\s*=", text, re.M):
        return _from_matpower(text)
    raise CaseFormatError("unrecognised case format (expected JSON object or MATPOWER mpc text)", 1, 1)


def load_case(path_or_name: str | Path) -> CaseDocument:
    """Read a case from a path or a builtin name (``ieee118``, ``ieee118-table2``)."""
    key = str(path_or_name)
    if key in BUILTIN_CASES:
        res = importlib_resources.files("scopf") / "data" / BUILTIN_CASES[key]
        return parse_case(res.read_text(encoding="utf-8"))
    return parse_case(Path(path_or_name).read_text(encoding="utf-8"))


def _num(row: dict, key: str, entity: str, default=None, required=False) -> float:
    val = row.get(key, default)
    if val is None:
        if required:
            raise CaseFormatError(f"missing field '{key}'", entity=entity)
        return default
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise CaseFormatError(f"field '{key}' must be numeric", entity=entity)
    if not math.isfinite(val):
        raise CaseFormatError(f"field '{key}' must be finite", entity=entity)
    return float(val)


def _int(row: dict, key: str, entity: str, default: int | None = None) -> int:
    val = row.get(key, default)
    if isinstance(val, bool) or not isinstance(val, (int, float)) or int(val) != val:
        raise CaseFormatError(f"field '{key}' must be an integer", entity=entity)
    return int(val)


def _complex_pair(row: dict, key: str, entity: str) -> list[float]:
    val = row.get(key)
    if (not isinstance(val, (list, tuple)) or len(val) != 2
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in val)):
        raise CaseFormatError(f"field '{key}' must be a [real, imag] pair", entity=entity)
    return [float(val[0]), float(val[1])]


def _from_native(raw: Any) -> CaseDocument:
    if not isinstance(raw, dict):
        raise CaseFormatError("case document must be a JSON object", 1, 1)
    if raw.get("format", FORMAT_NAME) != FORMAT_NAME:
        raise CaseFormatError(f"unsupported format {raw.get('format')!r}")
    if raw.get("version", FORMAT_VERSION) != FORMAT_VERSION:
        raise CaseFormatError(f"unsupported version {raw.get('version')!r}")
    base = _num(raw, "base_mva", "case", 100.0)
    if base <= 0:
        raise CaseFormatError("base_mva must be positive", entity="case")
    for key in ("buses", "branches"):
        if not isinstance(raw.get(key), list):
            raise CaseFormatError(f"'{key}' must be a list", entity="case")
    res_raw = raw.get("resources", [])
    if not isinstance(res_raw, list):
        raise CaseFormatError("'resources' must be a list", entity="case")

    buses = [_canon_bus(b) for b in raw["buses"]]
    bus_ids = {}
    for b in buses:
        if b["id"] in bus_ids:
            raise CaseFormatError("duplicate bus id", entity=f"bus {b['id']}")
        bus_ids[b["id"]] = b
    slack = [b["id"] for b in buses if b["type"] == "slack"]
    if len(slack) != 1:
        raise CaseFormatError(f"exactly one slack bus required, found {len(slack)}",
                              entity=f"slack buses {slack}")

    branches = [_canon_branch(br, k, bus_ids) for k, br in enumerate(raw["branches"])]
    ids = [br["id"] for br in branches]
    if len(set(ids)) != len(ids):
        raise CaseFormatError("duplicate branch id", entity="branches")
    resources = [_canon_resource(r, k, bus_ids) for k, r in enumerate(res_raw)]
    ids = [r["id"] for r in resources]
    if len(set(ids)) != len(ids):
        raise CaseFormatError("duplicate resource id", entity="resources")
    for b in buses:
        if b["type"] == "pv" and not any(r["bus"] == b["id"] and r["voltage_control"]
                                         for r in resources):
            raise CaseFormatError("pv bus without a voltage-controlling resource",
                                  entity=f"bus {b['id']}")

    scen = raw.get("scenario", {})
    if not isinstance(scen, dict):
        raise CaseFormatError("'scenario' must be an object", entity="case")
    scenario = {"in_phase_taps": bool(scen.get("in_phase_taps", True)),
                "quadrature_taps": bool(scen.get("quadrature_taps", True))}
    costs_raw = raw.get("costs", {})
    if not isinstance(costs_raw, dict):
        raise CaseFormatError("'costs' must be an object", entity="case")
    costs = {"c_loss": _num(costs_raw, "c_loss", "costs", 1.0),
             "redispatch": costs_raw.get("redispatch", "signed")}
    if costs["c_loss"] < 0:
        raise CaseFormatError("c_loss must be non-negative", entity="costs")
    if costs["redispatch"] not in ("signed", "absolute"):
        raise CaseFormatError("redispatch must be 'signed' or 'absolute'", entity="costs")
    return CaseDocument(base_mva=base, buses=buses, branches=branches, resources=resources,
                        scenario=scenario, costs=costs, name=str(raw.get("name", "")))


def _canon_bus(b: Any) -> dict:
    if not isinstance(b, dict):
        raise CaseFormatError("bus entries must be objects", entity="buses")
    bid = _int(b, "id", "bus ?")
    ent = f"bus {bid}"
    kind = b.get("type", "pq")
    if kind not in ("slack", "pv", "pq"):
        raise CaseFormatError(f"unknown bus type {kind!r}", entity=ent)
    out = {
        "id": bid,
        "type": kind,
        "base_kv": _num(b, "base_kv", ent, 1.0),
        "pd_mw": _num(b, "pd_mw", ent, 0.0),
        "qd_mvar": _num(b, "qd_mvar", ent, 0.0),
        "gs_mw": _num(b, "gs_mw", ent, 0.0),
        "bs_mvar": _num(b, "bs_mvar", ent, 0.0),
        "v_set_pu": _num(b, "v_set_pu", ent, 1.0),
        "v_min_pu": _num(b, "v_min_pu", ent, DEFAULT_V_MIN),
        "v_max_pu": _num(b, "v_max_pu", ent, DEFAULT_V_MAX),
    }
    if out["base_kv"] <= 0:
        raise CaseFormatError("base_kv must be positive", entity=ent)
    if not out["v_min_pu"] < out["v_max_pu"]:
        raise CaseFormatError("v_min_pu must be below v_max_pu", entity=ent)
    if out["v_set_pu"] <= 0:
        raise CaseFormatError("v_set_pu must be positive", entity=ent)
    return out


def _canon_tap(tap: Any, ent: str) -> dict | None:
    if tap is None or tap is False:
        return None
    if tap is True:
        tap = {}
    if not isinstance(tap, dict):
        raise CaseFormatError("'tap' must be an object, true or null", entity=ent)
    out = {}
    for key in ("n_min", "n_max", "m_min", "m_max"):
        out[key] = _int(tap, key, ent, DEFAULT_TAP[key])
    out["dv_inc"] = _num(tap, "dv_inc", ent, DEFAULT_TAP["dv_inc"])
    out["dphi_inc_deg"] = _num(tap, "dphi_inc_deg", ent, DEFAULT_TAP["dphi_inc_deg"])
    if not (out["n_min"] <= 0 <= out["n_max"] and out["m_min"] <= 0 <= out["m_max"]):
        raise CaseFormatError("tap ranges must contain zero", entity=ent)
    for n in (out["n_min"], out["n_max"]):
        if 1 + n * out["dv_inc"] <= 0:
            raise CaseFormatError("tap range reaches a non-positive ratio", entity=ent)
    if max(abs(out["m_min"]), abs(out["m_max"])) * out["dphi_inc_deg"] >= 90:
        raise CaseFormatError("quadrature range must stay below 90 degrees", entity=ent)
    return out


def _canon_branch(br: Any, k: int, bus_ids: dict) -> dict:
    if not isinstance(br, dict):
        raise CaseFormatError("branch entries must be objects", entity="branches")
    bid = _int(br, "id", f"branch #{k}", k + 1)
    ent = f"branch {bid}"
    out: dict[str, Any] = {"id": bid}
    for key in ("bus_i", "bus_j"):
        out[key] = _int(br, key, ent)
        if out[key] not in bus_ids:
            raise CaseFormatError(f"{key} references unknown bus {out[key]}", entity=ent)
    if out["bus_i"] == out["bus_j"]:
        raise CaseFormatError("branch connects a bus to itself", entity=ent)
    model = br.get("model", "pi")
    out["model"] = model
    if model == "pi":
        out["r_pu"] = _num(br, "r_pu", ent, required=True)
        out["x_pu"] = _num(br, "x_pu", ent, required=True)
        out["b_pu"] = _num(br, "b_pu", ent, 0.0)
        if out["r_pu"] == 0 and out["x_pu"] == 0:
            raise CaseFormatError("zero series impedance", entity=ent)
    elif model == "t":
        for key in ("y_i_pu", "y_j_pu", "y_s_pu"):
            out[key] = _complex_pair(br, key, ent)
        if sum(complex(*out[key]) for key in ("y_i_pu", "y_j_pu", "y_s_pu")) == 0:
            raise CaseFormatError("singular T-equivalent", entity=ent)
    else:
        raise CaseFormatError(f"unknown branch model {model!r}", entity=ent)
    tr = br.get("transformer", False)
    if not isinstance(tr, bool):
        raise CaseFormatError("'transformer' must be a boolean", entity=ent)
    out["transformer"] = tr
    out["ratio"] = _num(br, "ratio", ent, 1.0)
    out["shift_deg"] = _num(br, "shift_deg", ent, 0.0)
    out["vector_group"] = _int(br, "vector_group", ent, 0)
    out["v_i_rated_kv"] = _num(br, "v_i_rated_kv", ent, None)
    out["v_j_rated_kv"] = _num(br, "v_j_rated_kv", ent, None)
    out["tap"] = _canon_tap(br.get("tap"), ent)
    i_max = _num(br, "i_max_pu", ent, None)
    if i_max is not None and i_max <= 0:
        raise CaseFormatError("i_max_pu must be positive", entity=ent)
    out["i_max_pu"] = i_max
    if out["ratio"] <= 0:
        raise CaseFormatError("ratio must be positive", entity=ent)
    if not 0 <= out["vector_group"] <= 11:
        raise CaseFormatError("vector_group must lie in [0, 11]", entity=ent)
    rated = (out["v_i_rated_kv"], out["v_j_rated_kv"])
    if (rated[0] is None) != (rated[1] is None):
        raise CaseFormatError("give both or neither rated voltage", entity=ent)
    if not tr:
        if (out["ratio"] != 1 or out["shift_deg"] != 0 or out["vector_group"] != 0
                or out["tap"] is not None or rated[0] is not None):
            raise CaseFormatError("tap, ratio and vector group columns require transformer=true",
                                  entity=ent)
    elif rated[0] is not None and not rated[0] > rated[1] > 0:
        raise CaseFormatError("v_i_rated_kv must exceed v_j_rated_kv", entity=ent)
    return out


def _canon_resource(r: Any, k: int, bus_ids: dict) -> dict:
    if not isinstance(r, dict):
        raise CaseFormatError("resource entries must be objects", entity="resources")
    rid = _int(r, "id", f"resource #{k}", k + 1)
    ent = f"resource {rid}"
    out = {"id": rid, "bus": _int(r, "bus", ent)}
    if out["bus"] not in bus_ids:
        raise CaseFormatError(f"references unknown bus {out['bus']}", entity=ent)
    out["p_mw"] = _num(r, "p_mw", ent, 0.0)
    out["q_mvar"] = _num(r, "q_mvar", ent, 0.0)
    out["dp_min_mw"] = _num(r, "dp_min_mw", ent, 0.0)
    out["dp_max_mw"] = _num(r, "dp_max_mw", ent, 0.0)
    out["dq_min_mvar"] = _num(r, "dq_min_mvar", ent, 0.0)
    out["dq_max_mvar"] = _num(r, "dq_max_mvar", ent, 0.0)
    vc = r.get("voltage_control", False)
    if not isinstance(vc, bool):
        raise CaseFormatError("'voltage_control' must be a boolean", entity=ent)
    out["voltage_control"] = vc
    out["cost"] = _num(r, "cost", ent, 0.0)
    if out["dp_min_mw"] > out["dp_max_mw"] or out["dq_min_mvar"] > out["dq_max_mvar"]:
        raise CaseFormatError("redispatch bounds inverted", entity=ent)
    if out["cost"] < 0:
        raise CaseFormatError("cost must be non-negative", entity=ent)
    if vc and bus_ids[out["bus"]]["type"] == "pq":
        raise CaseFormatError("voltage-controlling resource on a pq bus", entity=ent)
    return out


# -- MATPOWER ---------------------------------------------------------------

_MPC_SCALAR = re.compile(r"^\s*mpc\.(\w+)\s*=\s*([^;\[\n]+);", re.M)
_MPC_MATRIX = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.S)


def _matpower_tables(text: str) -> tuple[dict, dict]:
    clean_lines = [ln.split("%", 1)[0] for ln in text.splitlines()]
    clean = "\n".join(clean_lines)
    scalars = {m.group(1): m.group(2).strip() for m in _MPC_SCALAR.finditer(clean)}
    tables = {}
    for m in _MPC_MATRIX.finditer(clean):
        name, body = m.group(1), m.group(2)
        first_line = clean.count("\n", 0, m.start(2)) + 1
        rows = []
        for k, line in enumerate(body.split("\n")):
            for chunk in line.split(";"):
                chunk = chunk.strip()
                if not chunk:
                    continue
                try:
                    rows.append([float(tok) for tok in re.split(r"[\s,]+", chunk)])
                except ValueError:
                    raise CaseFormatError(f"non-numeric entry in mpc.{name}",
                                          first_line + k, 1) from None
        widths = {len(r) for r in rows}
        if len(widths) > 1:
            raise CaseFormatError(f"ragged rows in mpc.{name}", first_line, 1)
        tables[name] = np.array(rows, dtype=float)
    return scalars, tables


def _from_matpower(text: str) -> CaseDocument:
    scalars, tables = _matpower_tables(text)
    for key in ("bus", "gen", "branch"):
        if key not in tables:
            raise CaseFormatError(f"missing mpc.{key} matrix")
    try:
        base = float(scalars.get("baseMVA", 100.0))
    except ValueError:
        raise CaseFormatError("baseMVA must be numeric") from None
    name = ""
    m = re.search(r"function\s+mpc\s*=\s*(\w+)", text)
    if m:
        name = m.group(1)
    bus_t, gen_t, br_t = tables["bus"], tables["gen"], tables["branch"]
    if bus_t.shape[1] < 13 or gen_t.shape[1] < 10 or br_t.shape[1] < 11:
        raise CaseFormatError("MATPOWER matrices have too few columns")

    type_map = {1: "pq", 2: "pv", 3: "slack"}
    live_gens = gen_t[gen_t[:, 7] > 0]
    vg = {int(g[0]): g[5] for g in live_gens}
    buses = []
    for row in bus_t:
        bid = int(row[0])
        kind = type_map.get(int(row[1]))
        if kind is None:
            raise CaseFormatError(f"unsupported bus type {int(row[1])}", entity=f"bus {bid}")
        if kind == "pv" and bid not in vg:
            kind = "pq"
        buses.append({
            "id": bid, "type": kind, "base_kv": row[9] if row[9] > 0 else 1.0,
            "pd_mw": row[2], "qd_mvar": row[3], "gs_mw": row[4], "bs_mvar": row[5],
            "v_set_pu": vg.get(bid, row[7]) if kind != "pq" else 1.0,
            "v_min_pu": row[12], "v_max_pu": row[11],
        })
    kinds = {b["id"]: b["type"] for b in buses}
    resources = []
    for k, g in enumerate(live_gens):
        bus = int(g[0])
        resources.append({
            "id": k + 1, "bus": bus, "p_mw": g[1], "q_mvar": g[2],
            "dp_min_mw": g[9] - g[1], "dp_max_mw": g[8] - g[1],
            "dq_min_mvar": g[4] - g[2], "dq_max_mvar": g[3] - g[2],
            "voltage_control": kinds.get(bus) in ("pv", "slack"), "cost": 0.0,
        })
    branches = []
    for k, row in enumerate(br_t):
        if row[10] <= 0:
            continue
        f, t = int(row[0]), int(row[1])
        tap, shift = row[8], row[9]
        is_tr = tap != 0 or shift != 0
        entry = {"id": k + 1, "bus_i": f, "bus_j": t, "model": "pi",
                 "r_pu": row[2], "x_pu": row[3], "b_pu": row[4],
                 "i_max_pu": row[5] / base if row[5] > 0 else None}
        if is_tr:
            # MATPOWER puts the ideal transformer N = tap * exp(j shift) at the
            # from bus; seen from the to bus the ratio is 1/N.
            n_abs = tap if tap != 0 else 1.0
            entry.update({"bus_i": t, "bus_j": f, "transformer": True,
                          "ratio": 1.0 / n_abs, "shift_deg": -shift, "tap": True})
        branches.append(entry)
    raw = {"name": name, "base_mva": base, "buses": buses, "branches": branches,
           "resources": resources}
    return _from_native(json.loads(json.dumps(raw, default=float)))


def table2_limits(doc: CaseDocument) -> CaseDocument:
    """Copy of ``doc`` with the benchmark voltage band 0.9-1.1 p.u. on every bus
    and default tap ranges on every transformer."""
    out = copy.deepcopy(doc)
    for b in out.buses:
        b["v_min_pu"], b["v_max_pu"] = DEFAULT_V_MIN, DEFAULT_V_MAX
    for br in out.branches:
        if br["transformer"]:
            br["tap"] = _canon_tap(True, "")
    return out


# ---------------------------------------------------------------------------
# conversion

def to_network(doc: CaseDocument) -> tuple[Network, ScopfConfig]:
    """Build the per-unit Network and SCOPF configuration from a document.

    Tap ranges disabled by the scenario flags are nulled: without in-phase
    control the n range collapses to 0, without quadrature control the m
    range does.
    """
    base = doc.base_mva
    res_at = {}
    for r in doc.resources:
        res_at.setdefault(r["bus"], []).append(r)
    buses = []
    kv = {}
    for b in doc.buses:
        kind = {"slack": BusKind.SLACK, "pv": BusKind.VOLTAGE_CONTROLLED,
                "pq": BusKind.POWER_CONTROLLED}[b["type"]]
        res = res_at.get(b["id"], [])
        p0 = (sum(r["p_mw"] for r in res) - b["pd_mw"]) / base
        q0 = (sum(r["q_mvar"] for r in res) - b["qd_mvar"]) / base
        buses.append(Bus(id=b["id"], kind=kind, v_rated=b["base_kv"], p0=p0, q0=q0,
                         v_min=b["v_min_pu"], v_max=b["v_max_pu"], v_set=b["v_set_pu"],
                         y_shunt=complex(b["gs_mw"], b["bs_mvar"]) / base))
        kv[b["id"]] = b["base_kv"]

    in_phase = doc.scenario.get("in_phase_taps", True)
    quadrature = doc.scenario.get("quadrature_taps", True)
    ports = []
    for br in doc.branches:
        if br["model"] == "pi":
            try:
                y_i, y_j, y_s = pi_to_t(br["r_pu"], br["x_pu"], br["b_pu"])
            except NetworkError as exc:
                raise NetworkError(f"branch {br['id']}: {exc}") from None
        else:
            y_i, y_j, y_s = (complex(*br[k]) for k in ("y_i_pu", "y_j_pu", "y_s_pu"))
        k = br["vector_group"]
        if br["transformer"]:
            if br["v_i_rated_kv"] is not None:
                ratio = rated_ratio(br["v_i_rated_kv"], br["v_j_rated_kv"], k)
                ratio /= kv[br["bus_i"]] / kv[br["bus_j"]]
            else:
                ratio = br["ratio"] * np.exp(1j * np.deg2rad(30 * k))
            ratio *= np.exp(1j * np.deg2rad(br["shift_deg"]))
        else:
            ratio = 1 + 0j
        tap = NULL_TAP
        t = br["tap"]
        if t is not None:
            nr = (t["n_min"], t["n_max"]) if in_phase else (0, 0)
            mr = (t["m_min"], t["m_max"]) if quadrature else (0, 0)
            tap = TapSpec(n_min=nr[0], n_max=nr[1], m_min=mr[0], m_max=mr[1],
                          dv_inc=t["dv_inc"] if in_phase else 0.0,
                          dphi_inc=np.deg2rad(t["dphi_inc_deg"]) if quadrature else 0.0)
            if tap.is_null:
                tap = NULL_TAP
        ports.append(TwoPort(bus_i=br["bus_i"], bus_j=br["bus_j"], y_i=y_i, y_j=y_j, y_s=y_s,
                             rated_ratio=complex(ratio), vector_group=k, tap=tap,
                             i_max=br["i_max_pu"] if br["i_max_pu"] is not None else math.inf,
                             transformer=br["transformer"], id=br["id"]))
    net = Network(buses=tuple(buses), ports=tuple(ports), base_mva=base, name=doc.name)
    resources = tuple(Resource(id=r["id"], bus=r["bus"], p0=r["p_mw"], q0=r["q_mvar"],
                               dp_min=r["dp_min_mw"], dp_max=r["dp_max_mw"],
                               dq_min=r["dq_min_mvar"], dq_max=r["dq_max_mvar"],
                               voltage_control=r["voltage_control"], cost=r["cost"])
                      for r in doc.resources)
    cfg = ScopfConfig(resources=resources, c_loss=doc.costs["c_loss"],
                      absolute_redispatch=doc.costs["redispatch"] == "absolute")
    return net, cfg


def from_network(net: Network, cfg: ScopfConfig) -> CaseDocument:
    """Re-export a network as a native document with T-model branches."""
    res_at = {}
    for r in cfg.resources:
        res_at.setdefault(r.bus, []).append(r)
    base = net.base_mva
    kind = {BusKind.SLACK: "slack", BusKind.VOLTAGE_CONTROLLED: "pv",
            BusKind.POWER_CONTROLLED: "pq"}
    buses = []
    for b in net.buses:
        res = res_at.get(b.id, [])
        buses.append({
            "id": b.id, "type": kind[b.kind], "base_kv": b.v_rated,
            "pd_mw": sum(r.p0 for r in res) - b.p0 * base,
            "qd_mvar": sum(r.q0 for r in res) - b.q0 * base,
            "gs_mw": b.y_shunt.real * base, "bs_mvar": b.y_shunt.imag * base,
            "v_set_pu": b.v_set, "v_min_pu": b.v_min, "v_max_pu": b.v_max,
        })
    branches = []
    for k, p in enumerate(net.ports):
        tap = None
        if not p.tap.is_null:
            tap = {"n_min": p.tap.n_min, "n_max": p.tap.n_max, "m_min": p.tap.m_min,
                   "m_max": p.tap.m_max, "dv_inc": p.tap.dv_inc,
                   "dphi_inc_deg": math.degrees(p.tap.dphi_inc)}
        ratio = p.rated_ratio
        shift = math.degrees(np.angle(ratio)) - 30 * p.vector_group
        entry = {"id": p.id if p.id is not None else k + 1, "bus_i": p.bus_i, "bus_j": p.bus_j,
                 "model": "t", "y_i_pu": [p.y_i.real, p.y_i.imag],
                 "y_j_pu": [p.y_j.real, p.y_j.imag], "y_s_pu": [p.y_s.real, p.y_s.imag],
                 "transformer": p.transformer,
                 "i_max_pu": None if math.isinf(p.i_max) else p.i_max}
        if p.transformer:
            entry.update({"ratio": abs(ratio), "shift_deg": shift,
                          "vector_group": p.vector_group, "tap": tap})
        branches.append(entry)
    resources = [{"id": r.id, "bus": r.bus, "p_mw": r.p0, "q_mvar": r.q0,
                  "dp_min_mw": r.dp_min, "dp_max_mw": r.dp_max,
                  "dq_min_mvar": r.dq_min, "dq_max_mvar": r.dq_max,
                  "voltage_control": r.voltage_control, "cost": r.cost}
                 for r in cfg.resources]
    raw = {"name": net.name, "base_mva": base, "buses": buses, "branches": branches,
           "resources": resources,
           "costs": {"c_loss": cfg.c_loss,
                     "redispatch": "absolute" if cfg.absolute_redispatch else "signed"}}
    return _from_native(raw)


# ---------------------------------------------------------------------------
# export

UTILIZATION_CLASSES = ("AR", "RR", "VC", "TIP", "TQ")
SUMMARY_KEYS = ("case", "scenario", "seed", "hyperparameters", "initial_p_loss_mw",
                "runs", "best", "average", "worst")


def write_trace_csv(path: Path, trace: np.ndarray) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "global_best"])
        for t, val in enumerate(trace):
            w.writerow([t, repr(float(val))])
    return path


def write_voltage_csv(path: Path, net: Network, states: dict[str, Any]) -> Path:
    """Nodal voltage profiles, one magnitude/angle column pair per named state."""
    names = list(states)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["bus"]
        for nm in names:
            header += [f"vm_{nm}", f"va_deg_{nm}"]
        w.writerow(header)
        for k, b in enumerate(net.buses):
            row = [b.id]
            for nm in names:
                v = states[nm].v[k]
                row += [f"{abs(v):.10f}", f"{math.degrees(np.angle(v)):.8f}"]
            w.writerow(row)
    return path


def write_utilization_csv(path: Path, rows: list[dict]) -> Path:
    """Control utilisation per class; rows are dicts with class, element, value, min, max."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "element", "value", "min", "max", "utilization"])
        for cls in UTILIZATION_CLASSES:
            for r in rows:
                if r["class"] != cls:
                    continue
                span = r["max"] - r["min"]
                util = (r["value"] - r["min"]) / span if span > 0 else 0.0
                w.writerow([cls, r["element"], repr(float(r["value"])), repr(float(r["min"])),
                            repr(float(r["max"])), f"{util:.6f}"])
    return path


def read_utilization_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        out = []
        for r in csv.DictReader(fh):
            eid = r["element"]
            out.append({"class": r["class"], "element": int(eid) if eid.lstrip("-").isdigit() else eid,
                        "value": float(r["value"]), "min": float(r["min"]),
                        "max": float(r["max"])})
        return out


def summarize_runs(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=float)
    return {"best": float(arr.min()), "average": float(arr.mean()), "worst": float(arr.max())}


def export_results(out_dir: Path, *, summary: dict, traces: list[np.ndarray],
                   utilization: list[dict] | None = None, net: Network | None = None,
                   voltage_states: dict | None = None, solution: dict | None = None) -> list[Path]:
    """Write campaign outputs to ``out_dir``.

    Files: ``trace_runNNN.csv`` per run, ``summary.json``, and when given
    ``utilization.csv``, ``voltages.csv`` and ``solution.json``.
    """
    missing = [k for k in SUMMARY_KEYS if k not in summary]
    if missing:
        raise ValueError(f"summary lacks keys {missing}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for k, tr in enumerate(traces):
        written.append(write_trace_csv(out_dir / f"trace_run{k:03d}.csv", tr))
    path = out_dir / "summary.json"
    path.write_text(json.dumps({k: summary[k] for k in SUMMARY_KEYS}, indent=1, sort_keys=False))
    written.append(path)
    if utilization is not None:
        written.append(write_utilization_csv(out_dir / "utilization.csv", utilization))
    if voltage_states is not None and net is not None:
        written.append(write_voltage_csv(out_dir / "voltages.csv", net, voltage_states))
    if solution is not None:
        path = out_dir / "solution.json"
        path.write_text(json.dumps(solution, indent=1))
        written.append(path)
    return written
