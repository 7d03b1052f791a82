"""Balancing-area model: regulation fleet, key parameters, state-space assembly.

The model is a single aggregated area. Regulation resources are reheat steam
turbines (3 states each), non-reheat steam turbines (2 states each) and BESS
converters (1 state each). State ordering:

    x = [df, (P_M, P_C, P_G) per reheat, (P_M, P_G) per non-reheat, P_E per BESS]

All powers are in p.u. on the system base; frequency deviation is in p.u. of
nominal frequency. Inputs are u = [dP_R (AGC signal), dP_NL (netload)].
"""

from __future__ import annotations

import csv
import hashlib
import json
import warnings
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "ReheatTurbineParams",
    "NonReheatTurbineParams",
    "BessParams",
    "SystemModel",
    "StateSpace",
    "ModelValidationError",
    "build_state_space",
    "tg_inertia_lower_bound",
    "validate_model",
    "state_labels",
    "model_hash",
    "load_fleet",
    "save_fleet",
    "load_schedule",
    "apply_schedule",
    "with_parameters",
]


class ModelValidationError(ValueError):
    """Raised when a fleet model violates its invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid system model: " + ", ".join(self.violations))


@dataclass(frozen=True)
class ReheatTurbineParams:
    governor_time_T_G: float        # s
    turbine_time_T_C: float         # s
    reheater_time_T_R: float        # s
    hp_fraction_F_H: float          # in [0, 1]
    droop_R: float                  # p.u. frequency / p.u. power, system base
    participation_alpha: float
    rated_capacity: float           # MW
    inertia_coeff: float            # s, on own base
    online: bool = True
    unit_id: str = ""


@dataclass(frozen=True)
class NonReheatTurbineParams:
    governor_time_T_G: float
    turbine_time_T_C: float
    droop_R: float
    participation_alpha: float
    rated_capacity: float
    inertia_coeff: float
    online: bool = True
    unit_id: str = ""


@dataclass(frozen=True)
class BessParams:
    converter_time_T_V: float       # s
    droop_R_V: float
    participation_alpha: float
    power_capacity: float           # MW
    unit_id: str = ""


@dataclass(frozen=True)
class SystemModel:
    reheat: tuple = ()
    nonreheat: tuple = ()
    bess: tuple = ()
    inertia_H: float = 5.0          # s, system base
    damping_D: float = 1.0          # p.u. power / p.u. frequency
    system_base: float = 100.0      # MVA
    nominal_frequency: float = 50.0  # Hz

    def __post_init__(self):
        object.__setattr__(self, "reheat", tuple(self.reheat))
        object.__setattr__(self, "nonreheat", tuple(self.nonreheat))
        object.__setattr__(self, "bess", tuple(self.bess))

    @property
    def online_reheat(self):
        return tuple(u for u in self.reheat if u.online)

    @property
    def online_nonreheat(self):
        return tuple(u for u in self.nonreheat if u.online)

    @property
    def state_dim(self):
        return 1 + 3 * len(self.online_reheat) + 2 * len(self.online_nonreheat) + len(self.bess)


@dataclass(frozen=True)
class StateSpace:
    A: np.ndarray                   # [n, n], 1/s
    B: np.ndarray                   # [n, 2]; col 0 = dP_R, col 1 = dP_NL
    n: int
    labels: tuple = ()


def validate_model(model: SystemModel) -> list:
    """Collect every invariant violation as a machine-readable code.

    Returns an empty list iff the model is valid. Violations are data, not
    failures; callers that need hard errors raise ModelValidationError.
    """
    out = []
    if not model.inertia_H > 0:
        out.append("NonPositiveInertia")
    if model.damping_D < 0:
        out.append("NegativeDamping")
    if not model.system_base > 0:
        out.append("NonPositiveSystemBase")
    if not model.nominal_frequency > 0:
        out.append("NonPositiveNominalFrequency")
    for u in model.reheat:
        if min(u.governor_time_T_G, u.turbine_time_T_C, u.reheater_time_T_R) <= 0:
            out.append("NonPositiveTimeConstant")
        if u.droop_R <= 0:
            out.append("NonPositiveDroop")
        if not 0.0 <= u.hp_fraction_F_H <= 1.0:
            out.append("HpFractionOutOfRange")
        if u.participation_alpha < 0:
            out.append("NegativeParticipation")
    for u in model.nonreheat:
        if min(u.governor_time_T_G, u.turbine_time_T_C) <= 0:
            out.append("NonPositiveTimeConstant")
        if u.droop_R <= 0:
            out.append("NonPositiveDroop")
        if u.participation_alpha < 0:
            out.append("NegativeParticipation")
    for u in model.bess:
        if u.converter_time_T_V <= 0:
            out.append("NonPositiveTimeConstant")
        if u.droop_R_V <= 0:
            out.append("NonPositiveDroop")
        if u.participation_alpha < 0:
            out.append("NegativeParticipation")
    alphas = [u.participation_alpha for u in model.online_reheat]
    alphas += [u.participation_alpha for u in model.online_nonreheat]
    alphas += [u.participation_alpha for u in model.bess]
    if alphas and abs(sum(alphas) - 1.0) > 1e-9:
        out.append("ParticipationNotNormalized")
    return out


def tg_inertia_lower_bound(model: SystemModel) -> float:
    """Inertia contributed by all online steam turbines, on the system base.

    Serves as the lower search bound for the system inertia in offline
    identification and as an input feature of the online estimator.
    """
    units = list(model.online_reheat) + list(model.online_nonreheat)
    if not units:
        warnings.warn("no online steam turbines; TG inertia bound is zero", stacklevel=2)
        return 0.0
    return sum(u.inertia_coeff * u.rated_capacity for u in units) / model.system_base


def build_state_space(model: SystemModel, bess_appendix_literal: bool = False) -> StateSpace:
    """Assemble the continuous-time A [n,n] and B [n,2] of the area model.

    The first row is the swing equation (A[0,0] = -D/2H, B[0,1] = -1/2H);
    each resource contributes a diagonal block plus a coupling row into the
    swing state and a coupling column from it. AGC input gains alpha/T_G sit
    on the governor-valve rows of steam turbines and alpha/T_V on BESS rows.

    With ``bess_appendix_literal`` the BESS diagonal entry is -1/(R_V*T_V)
    instead of the first-order converter lag -1/T_V (see Open Questions in
    the repo notes; default is the physically consistent lag).
    """
    violations = validate_model(model)
    if violations:
        raise ModelValidationError(violations)

    n = model.state_dim
    H2 = 2.0 * model.inertia_H
    A = np.zeros((n, n))
    B = np.zeros((n, 2))
    A[0, 0] = -model.damping_D / H2
    B[0, 1] = -1.0 / H2

    i = 1
    for u in model.online_reheat:
        tg, tc, tr, fh = u.governor_time_T_G, u.turbine_time_T_C, u.reheater_time_T_R, u.hp_fraction_F_H
        m, c, g = i, i + 1, i + 2
        A[0, m] = 1.0 / H2
        A[m, m] = -1.0 / tr
        A[m, c] = (tc - fh * tr) / (tr * tc)
        A[m, g] = fh / tc
        A[c, c] = -1.0 / tc
        A[c, g] = 1.0 / tc
        A[g, g] = -1.0 / tg
        A[g, 0] = -1.0 / (tg * u.droop_R)
        B[g, 0] = u.participation_alpha / tg
        i += 3
    for u in model.online_nonreheat:
        tg, tc = u.governor_time_T_G, u.turbine_time_T_C
        m, g = i, i + 1
        A[0, m] = 1.0 / H2
        A[m, m] = -1.0 / tc
        A[m, g] = 1.0 / tc
        A[g, g] = -1.0 / tg
        A[g, 0] = -1.0 / (tg * u.droop_R)
        B[g, 0] = u.participation_alpha / tg
        i += 2
    for u in model.bess:
        tv, rv = u.converter_time_T_V, u.droop_R_V
        A[0, i] = 1.0 / H2
        A[i, i] = -1.0 / (rv * tv) if bess_appendix_literal else -1.0 / tv
        A[i, 0] = -1.0 / (rv * tv)
        B[i, 0] = u.participation_alpha / tv
        i += 1

    return StateSpace(A=A, B=B, n=n, labels=state_labels(model))


def state_labels(model: SystemModel) -> tuple:
    labels = ["delta_f"]
    for k, u in enumerate(model.online_reheat):
        tag = u.unit_id or f"rh{k}"
        labels += [f"dP_M_{tag}", f"dP_C_{tag}", f"dP_G_{tag}"]
    for k, u in enumerate(model.online_nonreheat):
        tag = u.unit_id or f"nr{k}"
        labels += [f"dP_M_{tag}", f"dP_G_{tag}"]
    for k, u in enumerate(model.bess):
        tag = u.unit_id or f"es{k}"
        labels += [f"dP_E_{tag}"]
    return tuple(labels)


def droop_sum(model: SystemModel) -> float:
    """Sum of 1/R over online governors and BESS droops (steady-state gain)."""
    s = sum(1.0 / u.droop_R for u in model.online_reheat)
    s += sum(1.0 / u.droop_R for u in model.online_nonreheat)
    s += sum(1.0 / u.droop_R_V for u in model.bess)
    return s


def with_parameters(model: SystemModel, inertia_H: float, damping_D: float) -> SystemModel:
    """Copy of the model with new key parameters (H, D)."""
    return replace(model, inertia_H=inertia_H, damping_D=damping_D)


def model_hash(model: SystemModel, bess_appendix_literal: bool = False) -> str:
    """Stable content hash, used to key discretization caches."""
    parts = [f"H={float(model.inertia_H).hex()}", f"D={float(model.damping_D).hex()}",
             f"base={float(model.system_base).hex()}", f"lit={int(bess_appendix_literal)}"]
    for u in model.online_reheat:
        parts.append("rh:" + ",".join(float(v).hex() for v in (
            u.governor_time_T_G, u.turbine_time_T_C, u.reheater_time_T_R,
            u.hp_fraction_F_H, u.droop_R, u.participation_alpha)))
    for u in model.online_nonreheat:
        parts.append("nr:" + ",".join(float(v).hex() for v in (
            u.governor_time_T_G, u.turbine_time_T_C, u.droop_R, u.participation_alpha)))
    for u in model.bess:
        parts.append("es:" + ",".join(float(v).hex() for v in (
            u.converter_time_T_V, u.droop_R_V, u.participation_alpha)))
    return hashlib.sha256("|".join(parts).encode()).hexdigest()


# ---------------------------------------------------------------------------
# fleet file and commitment schedule I/O

_REHEAT_FIELDS = ("governor_time_T_G", "turbine_time_T_C", "reheater_time_T_R",
                  "hp_fraction_F_H", "droop_R", "participation_alpha",
                  "rated_capacity", "inertia_coeff")
_NONREHEAT_FIELDS = ("governor_time_T_G", "turbine_time_T_C", "droop_R",
                     "participation_alpha", "rated_capacity", "inertia_coeff")
_BESS_FIELDS = ("converter_time_T_V", "droop_R_V", "participation_alpha",
                "power_capacity")


def _unit_from_json(cls, fields, rec, kind, idx):
    kwargs = {}
    for f in fields:
        if f not in rec:
            raise ValueError(f"fleet file: {kind}[{idx}] missing field '{f}'")
        kwargs[f] = float(rec[f])
    kwargs["unit_id"] = str(rec.get("unit_id", f"{kind}{idx}"))
    if "online" in rec and cls is not BessParams:
        kwargs["online"] = bool(rec["online"])
    return cls(**kwargs)


def load_fleet(path) -> SystemModel:
    """Read a fleet description JSON (arrays reheat/nonreheat/bess)."""
    with open(path) as fh:
        doc = json.load(fh)
    for key in ("system_base_mva", "nominal_frequency_hz"):
        if key not in doc:
            raise ValueError(f"fleet file: missing scalar '{key}'")
    reheat = tuple(_unit_from_json(ReheatTurbineParams, _REHEAT_FIELDS, r, "reheat", i)
                   for i, r in enumerate(doc.get("reheat", ())))
    nonreheat = tuple(_unit_from_json(NonReheatTurbineParams, _NONREHEAT_FIELDS, r, "nonreheat", i)
                      for i, r in enumerate(doc.get("nonreheat", ())))
    bess = tuple(_unit_from_json(BessParams, _BESS_FIELDS, r, "bess", i)
                 for i, r in enumerate(doc.get("bess", ())))
    return SystemModel(
        reheat=reheat, nonreheat=nonreheat, bess=bess,
        inertia_H=float(doc.get("inertia_H_s", 5.0)),
        damping_D=float(doc.get("damping_D_pu", 1.0)),
        system_base=float(doc["system_base_mva"]),
        nominal_frequency=float(doc["nominal_frequency_hz"]),
    )


def save_fleet(model: SystemModel, path):
    doc = {
        "system_base_mva": model.system_base,
        "nominal_frequency_hz": model.nominal_frequency,
        "inertia_H_s": model.inertia_H,
        "damping_D_pu": model.damping_D,
        "reheat": [{f: getattr(u, f) for f in _REHEAT_FIELDS + ("online", "unit_id")}
                   for u in model.reheat],
        "nonreheat": [{f: getattr(u, f) for f in _NONREHEAT_FIELDS + ("online", "unit_id")}
                      for u in model.nonreheat],
        "bess": [{f: getattr(u, f) for f in _BESS_FIELDS + ("unit_id",)}
                 for u in model.bess],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_schedule(path) -> dict:
    """Commitment CSV `hour, unit_id, online` -> {hour: {unit_id: online}}."""
    sched = {}
    with open(path, newline="") as fh:
        rd = csv.DictReader(row for row in fh if not row.startswith("#"))
        need = {"hour", "unit_id", "online"}
        if rd.fieldnames is None or not need.issubset(rd.fieldnames):
            raise ValueError(f"schedule file: header must contain {sorted(need)}")
        for rec in rd:
            hour = int(rec["hour"])
            sched.setdefault(hour, {})[rec["unit_id"]] = bool(int(rec["online"]))
    return sched


def apply_schedule(model: SystemModel, schedule: dict, hour: int,
                   renormalize: bool = True) -> SystemModel:
    """Fleet with on/off statuses of hour `hour` applied.

    Participation factors of the resources that remain online are rescaled
    to sum to one, since the AGC signal is redistributed among them.
    """
    status = schedule.get(hour, {})
    reheat = tuple(replace(u, online=status.get(u.unit_id, u.online)) for u in model.reheat)
    nonreheat = tuple(replace(u, online=status.get(u.unit_id, u.online)) for u in model.nonreheat)
    out = replace(model, reheat=reheat, nonreheat=nonreheat)
    return normalize_participation(out) if renormalize else out


def normalize_participation(model: SystemModel) -> SystemModel:
    total = sum(u.participation_alpha for u in model.online_reheat)
    total += sum(u.participation_alpha for u in model.online_nonreheat)
    total += sum(u.participation_alpha for u in model.bess)
    if total <= 0:
        return model
    reheat = tuple(replace(u, participation_alpha=u.participation_alpha / total if u.online else u.participation_alpha)
                   for u in model.reheat)
    nonreheat = tuple(replace(u, participation_alpha=u.participation_alpha / total if u.online else u.participation_alpha)
                      for u in model.nonreheat)
    bess = tuple(replace(u, participation_alpha=u.participation_alpha / total) for u in model.bess)
    return replace(model, reheat=reheat, nonreheat=nonreheat, bess=bess)
