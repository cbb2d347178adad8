"""Embedded Kingdom-of-Saudi-Arabia interconnection case study.

Two generation fleets: the pre-renewables system and the 2030 plan with large
inverter-based capacity in every region. Capacities in GW; every synchronous
unit carries H = 5 s and D = 1 on its own base. Regions are declared in the
state-ordering convention (central, eastern, southern, western, ties last);
reports use the central/eastern/western/southern column order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .primary import PrimaryBounds, PrimaryWeights
from .sfr import GeneratorUnit, RegionSpec, TieLine

__all__ = ["KsaDataset", "load_ksa_dataset", "REPORT_ORDER"]

F0_HZ = 60.0
K_SYNC = 0.1
UFLS_THRESHOLD_HZ = -0.15
SETTLING_BAND_HZ = 0.015
DESIGN_DISTURBANCE_PU = -0.02

REPORT_ORDER = ["central", "eastern", "western", "southern"]


def _units(steam: float = 0.0, gas: float = 0.0, ccgt: float = 0.0) -> tuple[GeneratorUnit, ...]:
    out = []
    if steam:
        out.append(GeneratorUnit("steam", steam))
    if gas:
        out.append(GeneratorUnit("gas", gas))
    if ccgt:
        out.append(GeneratorUnit("ccgt", ccgt))
    return tuple(out)


def _regions_2030() -> tuple[RegionSpec, ...]:
    return (
        RegionSpec("central", _units(gas=3.8, ccgt=1.3), renewable_gw=26.0, total_gw=31.1),
        RegionSpec("eastern", _units(steam=15.3, gas=4.2, ccgt=3.0), renewable_gw=8.0, total_gw=30.5),
        RegionSpec("southern", _units(gas=2.7), renewable_gw=8.0, total_gw=10.7),
        RegionSpec("western", _units(steam=9.9, gas=2.8, ccgt=2.0), renewable_gw=33.0, total_gw=47.7),
    )


def _regions_pre_res() -> tuple[RegionSpec, ...]:
    return (
        RegionSpec("central", _units(gas=12.7, ccgt=4.4), renewable_gw=0.0, total_gw=17.1),
        RegionSpec("eastern", _units(steam=22.3, gas=6.2, ccgt=4.5), renewable_gw=1.3, total_gw=34.3),
        RegionSpec("southern", _units(gas=6.7), renewable_gw=0.0, total_gw=6.7),
        RegionSpec("western", _units(steam=22.3, gas=6.3, ccgt=4.4), renewable_gw=0.0, total_gw=33.0),
    )


def _lines() -> tuple[TieLine, ...]:
    return (
        TieLine("central", "eastern", 7.5),
        TieLine("central", "southern", 0.85),
        TieLine("central", "western", 3.0),
        TieLine("southern", "western", 3.0),
    )


@dataclass(frozen=True)
class KsaDataset:
    regions_2030: tuple[RegionSpec, ...]
    regions_pre_res: tuple[RegionSpec, ...]
    lines: tuple[TieLine, ...]
    f0: float = F0_HZ
    k_sync: float = K_SYNC
    ufls_threshold_hz: float = UFLS_THRESHOLD_HZ
    settling_band_hz: float = SETTLING_BAND_HZ
    design_disturbance_pu: float = DESIGN_DISTURBANCE_PU
    report_order: tuple[str, ...] = tuple(REPORT_ORDER)
    # primary design weights per region (frequency emphasis differs by region)
    primary_weights: dict = field(default_factory=lambda: {
        "central": PrimaryWeights(mu1=24.0, mu2=1.0, mu3=1.0),
        "eastern": PrimaryWeights(mu1=6.0, mu2=1.0, mu3=1.0),
        "western": PrimaryWeights(mu1=30.0, mu2=1.0, mu3=1.0),
        "southern": PrimaryWeights(mu1=30.0, mu2=1.0, mu3=1.0),
    })
    primary_bounds: PrimaryBounds = field(default_factory=PrimaryBounds)
    # documented observer seed for the studied disturbance
    dphat0_seed: dict = field(default_factory=lambda: {"central": -0.018, "western": -0.001})
    observer_q_scale: float = 10.0
    observer_r_scale: float = 1.0


def load_ksa_dataset() -> KsaDataset:
    """The embedded case-study data (capacities, lines, constants, defaults)."""
    return KsaDataset(
        regions_2030=_regions_2030(),
        regions_pre_res=_regions_pre_res(),
        lines=_lines(),
    )
