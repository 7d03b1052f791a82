"""Bundled example fleet and commitment schedule.

Small stand-in for a real regulation fleet: three steam turbines whose
TG inertia adds up to about 14 s on the system base, plus two BESS units
with converter parameters (0.01 s / 0.067 and 0.015 s / 0.08).
"""

from __future__ import annotations

import csv

from .fleet import (BessParams, NonReheatTurbineParams, ReheatTurbineParams,
                    SystemModel)

__all__ = ["example_fleet", "example_schedule_rows", "write_example_schedule",
           "EVALUATION_CASES"]

# (H, D) triples used for the side-by-side controller comparison
EVALUATION_CASES = ((13.48, 0.0041), (17.74, 0.0105), (20.00, 0.0174))


def example_fleet(inertia_H: float = 15.6, damping_D: float = 0.010) -> SystemModel:
    return SystemModel(
        reheat=(
            ReheatTurbineParams(governor_time_T_G=0.20, turbine_time_T_C=0.30,
                                reheater_time_T_R=7.0, hp_fraction_F_H=0.30,
                                droop_R=0.05, participation_alpha=0.35,
                                rated_capacity=400.0, inertia_coeff=5.0,
                                unit_id="rh1"),
            ReheatTurbineParams(governor_time_T_G=0.25, turbine_time_T_C=0.35,
                                reheater_time_T_R=8.0, hp_fraction_F_H=0.35,
                                droop_R=0.06, participation_alpha=0.30,
                                rated_capacity=300.0, inertia_coeff=4.5,
                                unit_id="rh2"),
        ),
        nonreheat=(
            NonReheatTurbineParams(governor_time_T_G=0.15, turbine_time_T_C=0.40,
                                   droop_R=0.05, participation_alpha=0.20,
                                   rated_capacity=200.0, inertia_coeff=4.0,
                                   unit_id="nr1"),
        ),
        bess=(
            BessParams(converter_time_T_V=0.010, droop_R_V=0.067,
                       participation_alpha=0.09, power_capacity=40.0,
                       unit_id="es1"),
            BessParams(converter_time_T_V=0.015, droop_R_V=0.080,
                       participation_alpha=0.06, power_capacity=33.0,
                       unit_id="es2"),
        ),
        inertia_H=inertia_H,
        damping_D=damping_D,
        system_base=300.0,
        nominal_frequency=50.0,
    )


def example_schedule_rows(hours: int = 24):
    """All units online except nr1 during hours 3-5 (light-load window)."""
    rows = []
    for h in range(hours):
        for uid in ("rh1", "rh2", "nr1"):
            online = 0 if (uid == "nr1" and 3 <= h <= 5) else 1
            rows.append((h, uid, online))
    return rows


def write_example_schedule(path, hours: int = 24):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", "unit_id", "online"])
        w.writerows(example_schedule_rows(hours))
