"""Potential accessibility per zone and slot, free-flow baseline and relative field."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .routing import CostCube

DEFAULT_BETA = -0.065
DEFAULT_FLOOR_PCT = 50.0


class AccessibilityError(ValueError):
    pass


@dataclass(frozen=True)
class DecayParams:
    beta: float = DEFAULT_BETA  # per minute

    def __post_init__(self):
        if not (self.beta < 0 and math.isfinite(self.beta)):
            raise AccessibilityError(f"beta must be negative, got {self.beta}")


def decay_weight(cost_min, params: DecayParams = DecayParams()):
    """exp(beta * cost); a zero-cost trip weighs 1 and an unreachable one 0."""
    c = np.asarray(cost_min, dtype=float)
    if np.isnan(c).any() or (c < 0).any():
        raise AccessibilityError("costs must be >= 0 (or +inf)")
    w = np.exp(params.beta * c)
    return float(w) if w.ndim == 0 else w


def potential_accessibility(cost_row, opportunities, params: DecayParams = DecayParams()):
    """Sum of opportunities weighted by the decay of their travel cost.

    ``cost_row`` may carry leading axes (e.g. slot, origin); the last axis
    runs over destinations and must match ``opportunities``.
    """
    costs = np.asarray(cost_row, dtype=float)
    d = np.asarray(opportunities, dtype=float)
    if costs.shape[-1:] != d.shape:
        raise AccessibilityError(
            f"cost row has {costs.shape[-1] if costs.ndim else 0} destinations, "
            f"opportunities have {d.size}")
    out = np.sum(d * decay_weight(costs, params), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def accessibility_cube(cube: CostCube, opportunities, params: DecayParams = DecayParams()) -> np.ndarray:
    """(S, O) absolute accessibility from a cost cube."""
    return potential_accessibility(cube.values, opportunities, params)


def free_flow_baseline(network, grid, params: DecayParams = DecayParams(), workers: int = 1) -> np.ndarray:
    """Per-origin accessibility with all edges at free-flow speed."""
    from .routing import build_freeflow_cube

    cube = build_freeflow_cube(network, grid, workers)
    return accessibility_cube(cube, grid.opportunities, params)[0]


def relative_field(absolute, baseline, floor_pct: float = DEFAULT_FLOOR_PCT):
    """Percent of baseline, clamped below at ``floor_pct``.

    Returns ``(pct, gap)``: zones whose baseline is not positive are flagged
    in ``gap`` and carry NaN.
    """
    a = np.asarray(absolute, dtype=float)
    b = np.asarray(baseline, dtype=float)
    gap = ~(b > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        pct = np.maximum(floor_pct, 100.0 * a / np.where(gap, 1.0, b))
    pct = np.where(gap, np.nan, pct)
    return pct, gap


@dataclass
class AccessibilityField:
    zone_ids: tuple
    absolute: np.ndarray   # (S, O)
    baseline: np.ndarray   # (O,)
    pct: np.ndarray        # (S, O), NaN on gaps
    gap: np.ndarray        # (O,) bool
    floor_pct: float = DEFAULT_FLOOR_PCT

    @classmethod
    def from_cubes(cls, cube: CostCube, freeflow: CostCube, opportunities,
                   params: DecayParams = DecayParams(),
                   floor_pct: float = DEFAULT_FLOOR_PCT) -> "AccessibilityField":
        if cube.origin_ids != freeflow.origin_ids or cube.dest_ids != freeflow.dest_ids:
            raise AccessibilityError("scenario and free-flow cubes cover different zones")
        absolute = accessibility_cube(cube, opportunities, params)
        baseline = accessibility_cube(freeflow, opportunities, params)[0]
        pct, gap = relative_field(absolute, baseline, floor_pct)
        return cls(cube.origin_ids, absolute, baseline, pct, np.broadcast_to(gap, baseline.shape).copy(),
                   floor_pct)

    def write(self, access_path, baseline_path) -> None:
        with open(access_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["zone_id", "slot", "abs_value", "pct"])
            for o, zid in enumerate(self.zone_ids):
                for s in range(self.absolute.shape[0]):
                    p = self.pct[s, o]
                    w.writerow([zid, s, repr(float(self.absolute[s, o])),
                                "" if np.isnan(p) else repr(float(p))])
        with open(baseline_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["zone_id", "baseline_value"])
            for o, zid in enumerate(self.zone_ids):
                w.writerow([zid, repr(float(self.baseline[o]))])


def read_access(access_path, baseline_path, floor_pct: float = DEFAULT_FLOOR_PCT,
                slots: Optional[int] = None) -> AccessibilityField:
    base = {}
    with open(baseline_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            base[int(row["zone_id"])] = float(row["baseline_value"])
    zone_ids = tuple(base)
    rows = {}
    with open(access_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows[(int(row["zone_id"]), int(row["slot"]))] = float(row["abs_value"])
    n_slots = slots if slots is not None else 1 + max((s for _, s in rows), default=-1)
    absolute = np.empty((n_slots, len(zone_ids)))
    for o, zid in enumerate(zone_ids):
        for s in range(n_slots):
            try:
                absolute[s, o] = rows[(zid, s)]
            except KeyError:
                raise AccessibilityError(f"{access_path}: missing zone {zid} slot {s}") from None
    baseline = np.array([base[z] for z in zone_ids])
    pct, gap = relative_field(absolute, baseline, floor_pct)
    return AccessibilityField(zone_ids, absolute, baseline, pct, gap, floor_pct)
