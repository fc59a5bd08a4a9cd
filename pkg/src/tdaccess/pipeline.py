"""End-to-end stages with content-hash based reuse.

Every stage reads and writes only the documented files, so stages can be
run one at a time.  ``run_manifest.json`` in the output directory records
each stage's input and output hashes; a stage whose inputs hash the same
as last time, and whose outputs are still intact, is skipped.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import cartogram as carto
from .accessibility import AccessibilityField, DecayParams, read_access
from .config import RunConfig
from .network import fifoize, load_network, network_stats
from .render import (FRAME_PATTERN, ColorRamp, ExtrusionView, FrameSpec, emit_animation,
                     render_cartogram, render_choropleth, render_extrusion, square_extent)
from .routing import (SlotSchedule, build_cost_cube, build_freeflow_cube, read_cube,
                      to_center_column, write_cube, write_cube_csv)
from .synth import generate_synthetic
from .zoning import (ZoneGrid, build_grid, mark_external_buffer, read_mask, read_zones,
                     snap_centroids, write_zones)

log = logging.getLogger(__name__)

MANIFEST = "run_manifest.json"
CUBE = "cube.tdc"
CUBE_FF = "cube_freeflow.tdc"
ZONES_USED = "zones_used.csv"
SUMMARY = "cube_summary.txt"
ACCESS = "access.csv"
BASELINE = "baseline.csv"
AREA = "area.csv"
SCALES = "cartogram_scale.csv"


def _distorted(direction: str) -> str:
    return f"distorted_{direction}.csv"


def _directions(cfg: RunConfig) -> list:
    return ["from", "to"] if cfg.direction == "both" else [cfg.direction]


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    def __init__(self, out_dir: Path):
        self.path = Path(out_dir) / MANIFEST
        try:
            self.data = json.loads(self.path.read_text(encoding="utf-8"))
        except (OSError, ValueError):
            self.data = {"stages": {}}

    def save(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @staticmethod
    def input_hash(files: Sequence[Path], params: dict) -> str:
        h = hashlib.sha256()
        for f in files:
            h.update(str(Path(f).name).encode())
            h.update(file_hash(f).encode())
        h.update(json.dumps(params, sort_keys=True, default=str).encode())
        return h.hexdigest()

    def is_current(self, stage: str, in_hash: str, out_dir: Path) -> bool:
        rec = self.data["stages"].get(stage)
        if not rec or rec.get("status") != "done" or rec.get("input_hash") != in_hash:
            return False
        for rel, digest in rec.get("outputs", {}).items():
            p = out_dir / rel
            if not p.is_file() or file_hash(p) != digest:
                return False
        return True

    def record(self, stage: str, in_hash: str, out_dir: Path, outputs: Sequence[Path],
               seconds: float) -> None:
        self.data["stages"][stage] = {
            "status": "done",
            "input_hash": in_hash,
            "outputs": {str(Path(p).relative_to(out_dir)): file_hash(p) for p in sorted(outputs)},
            "seconds": round(seconds, 3),
        }
        self.save()


def _run_stage(cfg: RunConfig, stage: str, inputs: Sequence[Path], params: dict,
               body: Callable[[], Sequence[Path]]) -> bool:
    """Run ``body`` unless its recorded inputs are unchanged; True if it ran."""
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(out)
    h = RunManifest.input_hash(inputs, params)
    if manifest.is_current(stage, h, out):
        log.info("%s: inputs unchanged, skipped", stage)
        return False
    t0 = time.perf_counter()
    outputs = body()
    manifest.record(stage, h, out, outputs, time.perf_counter() - t0)
    return True


# ------------------------------------------------------------------ stages

def cmd_synth(cfg: RunConfig) -> list:
    """Write a synthetic dataset into the data directory."""
    data = cfg.data
    generate_synthetic(cfg.synth, cfg.seed, data)
    return sorted(data.iterdir())


def _zone_inputs(cfg: RunConfig) -> list:
    """Zone-defining files: zones.csv, or else the optional mask and opportunity points."""
    if cfg.zones_file or cfg.path("zones").is_file():
        cfg.require_files("zones")
        return [cfg.path("zones")]
    keys = [k for k in ("mask", "opportunities") if getattr(cfg, f"{k}_file")]
    cfg.require_files(*keys)
    return [cfg.path(k) for k in keys]


def _load_inputs(cfg: RunConfig):
    cfg.require_files("nodes", "edges", "profiles")
    net = load_network(cfg.path("nodes"), cfg.path("edges"), cfg.path("profiles"), cfg.weekday)
    if cfg.zones_file or cfg.path("zones").is_file():
        return net, read_zones(cfg.path("zones"), cfg.cell_size_m, cfg.center_zone_id)
    # no zone file: tile the network extent
    xy = net.node_xy
    bbox = (*xy.min(axis=0), *xy.max(axis=0))
    mask = read_mask(cfg.path("mask")) if cfg.mask_file else None
    opp = str(cfg.path("opportunities")) if cfg.opportunities_file else 1.0
    grid = build_grid(bbox, cfg.cell_size_m, opp, mask)
    if cfg.center_zone_id is not None:
        grid = ZoneGrid(grid.cell_size_m, grid.zones, cfg.center_zone_id)
    return net, grid


def cmd_stats(cfg: RunConfig):
    cfg.require_files("nodes", "edges", "profiles")
    net = load_network(cfg.path("nodes"), cfg.path("edges"), cfg.path("profiles"), cfg.weekday)
    stats = network_stats(net)
    cfg.out.mkdir(parents=True, exist_ok=True)
    with open(cfg.out / "stats.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frc", "km", "profiled_km", "profiled_pct"])
        for frc, km, pkm, pct in stats.rows():
            w.writerow([frc, f"{km:.3f}", f"{pkm:.3f}", f"{pct:.2f}"])
        w.writerow(["all", f"{stats.total_km:.3f}", f"{stats.profiled_km:.3f}",
                    f"{stats.profiled_pct:.2f}"])
    return stats


def _matrix_params(cfg: RunConfig) -> dict:
    return {"weekday": cfg.weekday, "interval": cfg.slot_interval_min, "slots": cfg.n_slots,
            "buffer": cfg.buffer_min, "snap": cfg.snap_radius_m, "cell": cfg.cell_size_m,
            "center": cfg.center_zone_id}


def cmd_matrix(cfg: RunConfig) -> bool:
    cfg.require_files("nodes", "edges", "profiles")
    inputs = [cfg.path(k) for k in ("nodes", "edges", "profiles")] + _zone_inputs(cfg)

    def body():
        net, grid = _load_inputs(cfg)
        net = fifoize(net)
        grid = snap_centroids(grid, net, cfg.snap_radius_m)
        grid = mark_external_buffer(grid, net, cfg.buffer_min)
        slots = SlotSchedule(cfg.n_slots, cfg.slot_interval_min * 60.0)
        cube = build_cost_cube(net, grid, slots, cfg.workers)
        ff = build_freeflow_cube(net, grid, cfg.workers)
        out = cfg.out
        write_cube(cube, out / CUBE)
        write_cube(ff, out / CUBE_FF)
        write_zones(grid, out / ZONES_USED)
        (out / SUMMARY).write_text(
            f"slots\t{cube.shape[0]}\norigins\t{cube.shape[1]}\ndestinations\t{cube.shape[2]}\n"
            f"center_zone_id\t{grid.center_zone_id}\nunreachable\t{cube.unreachable}\n",
            encoding="utf-8")
        outputs = [out / CUBE, out / CUBE_FF, out / ZONES_USED, out / SUMMARY]
        if cfg.export_csv:
            write_cube_csv(cube, out / "cube.csv")
            outputs.append(out / "cube.csv")
        return outputs

    return _run_stage(cfg, "matrix", inputs, _matrix_params(cfg), body)


def _center_of(cfg: RunConfig) -> int:
    if cfg.center_zone_id is not None:
        return cfg.center_zone_id
    for line in (cfg.out / SUMMARY).read_text(encoding="utf-8").splitlines():
        k, v = line.split("\t")
        if k == "center_zone_id":
            return int(v)
    raise ValueError("center zone unknown; run matrix first")


def load_cubes(cfg: RunConfig):
    """Cubes and retained zones written by the matrix stage."""
    for name in (CUBE, CUBE_FF, ZONES_USED):
        if not (cfg.out / name).is_file():
            raise FileNotFoundError(f"{cfg.out / name} missing; run matrix first")
    grid = read_zones(cfg.out / ZONES_USED, cfg.cell_size_m, _center_of(cfg))
    origins = grid.origin_ids
    dests = grid.zone_ids
    slots = SlotSchedule(cfg.n_slots, cfg.slot_interval_min * 60.0).seconds
    cube = read_cube(cfg.out / CUBE, origins, dests)
    if cube.shape[0] != len(slots):
        raise ValueError(f"cube has {cube.shape[0]} slots, config expects {len(slots)}")
    cube.slot_seconds = slots
    ff = read_cube(cfg.out / CUBE_FF, origins, dests, [0.0])
    return cube, ff, grid


def cmd_access(cfg: RunConfig) -> bool:
    inputs = [cfg.out / CUBE, cfg.out / CUBE_FF, cfg.out / ZONES_USED]

    def body():
        cube, ff, grid = load_cubes(cfg)
        field = AccessibilityField.from_cubes(cube, ff, grid.opportunities,
                                              DecayParams(cfg.beta), cfg.floor_pct)
        field.write(cfg.out / ACCESS, cfg.out / BASELINE)
        n_gap = int(field.gap.sum())
        if n_gap:
            log.warning("%d zones have zero baseline accessibility and are rendered as gaps", n_gap)
        return [cfg.out / ACCESS, cfg.out / BASELINE]

    for p in inputs:
        if not p.is_file():
            raise FileNotFoundError(f"{p} missing; run matrix first")
    return _run_stage(cfg, "access", inputs, {"beta": cfg.beta, "floor": cfg.floor_pct,
                                              "slots": cfg.n_slots}, body)


def _surface_samples(cube, grid, center: int, direction: str, slot: int) -> tuple:
    """Centroids and minutes of internal zones for one direction and slot."""
    times = to_center_column(cube, center)
    by_id = grid.by_id()
    ids = cube.origin_ids
    if direction == "from":
        pos = [cube.dest_pos(z) for z in ids]
        minutes = times.from_center[slot, pos]
    else:
        minutes = times.to_center[slot, :]
    xy = np.array([(by_id[z].centroid_x, by_id[z].centroid_y) for z in ids])
    return xy, minutes


def cartogram_center(cfg: RunConfig, layers, grid, center_zone: int) -> tuple:
    for lay in layers:
        if lay.name == "center" and lay.parts and len(lay.parts[0]):
            return tuple(float(v) for v in lay.parts[0][0])
    z = grid.by_id()[center_zone]
    return (z.centroid_x, z.centroid_y)


def build_cartograms(cfg: RunConfig, cube, ff, grid, layers) -> dict:
    """Distorted layers and relative areas per direction.

    Returns ``{direction: {"scale", "center", "points", "scenarios": {label: layers},
    "areas": {label: pct}}}``; the free-flow scenario is labelled ``freeflow``.
    """
    center_zone = _center_of(cfg)
    center = cartogram_center(cfg, layers, grid, center_zone)
    pts = carto.DensePoints.from_layers(layers, cfg.densify_m, center)
    names = [lay.name for lay in layers]
    result = {}
    for direction in _directions(cfg):
        xy, m = _surface_samples(ff, grid, center_zone, direction, 0)
        ff_surface = carto.ImpedanceSurface(xy, m, cfg.idw_power)
        if cfg.cartogram_scale is not None:
            scale = cfg.cartogram_scale
        elif "boundary" in names:
            scale = carto.auto_scale(pts, ff_surface, center, "boundary")
        else:
            scale = carto.auto_scale(pts, ff_surface, center, names[0])
        scenarios = {"freeflow": carto.distort(pts, ff_surface, center, scale)}
        for s in cfg.slot_indices_for_cartogram():
            xy, m = _surface_samples(cube, grid, center_zone, direction, s)
            surface = carto.ImpedanceSurface(xy, m, cfg.idw_power)
            scenarios[f"{s:04d}"] = carto.distort(pts, surface, center, scale)
        boundary = pts.select("boundary") if "boundary" in names else None
        areas = {}
        if boundary is not None:
            areas = carto.relative_area({k: v[boundary] for k, v in scenarios.items()}, "freeflow")
        result[direction] = {
            "scale": scale, "center": center, "points": pts,
            "scenarios": {k: pts.rebuild(v) for k, v in scenarios.items()},
            "areas": areas,
        }
    return result


def _cartogram_params(cfg: RunConfig) -> dict:
    return {"idw": cfg.idw_power, "scale": cfg.cartogram_scale, "densify": cfg.densify_m,
            "direction": cfg.direction, "slots": cfg.slot_indices_for_cartogram(),
            "center": cfg.center_zone_id, "interval": cfg.slot_interval_min}


def cmd_cartogram(cfg: RunConfig) -> bool:
    cfg.require_files("layers")
    inputs = [cfg.out / CUBE, cfg.out / CUBE_FF, cfg.out / ZONES_USED, cfg.path("layers")]
    for p in inputs:
        if not p.is_file():
            raise FileNotFoundError(f"{p} missing; run matrix first")

    def body():
        cube, ff, grid = load_cubes(cfg)
        layers = carto.read_layers(cfg.path("layers"))
        res = build_cartograms(cfg, cube, ff, grid, layers)
        slots = SlotSchedule(cfg.n_slots, cfg.slot_interval_min * 60.0)
        outputs = []
        with open(cfg.out / AREA, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "direction", "relative_area_pct"])
            for direction, r in res.items():
                for label, pct in r["areas"].items():
                    name = label if label == "freeflow" else slots.label(int(label))
                    w.writerow([name, direction, f"{pct:.6f}"])
        outputs.append(cfg.out / AREA)
        with open(cfg.out / SCALES, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["direction", "scale_km_per_min", "center_x", "center_y"])
            for direction, r in res.items():
                w.writerow([direction, repr(r["scale"]), repr(r["center"][0]), repr(r["center"][1])])
        outputs.append(cfg.out / SCALES)
        for direction, r in res.items():
            rows = []
            for label, lays in r["scenarios"].items():
                rows += [(label,) + row for row in carto.layer_rows(lays)]
            carto.write_layer_rows(rows, cfg.out / _distorted(direction), scenario_col=True)
            outputs.append(cfg.out / _distorted(direction))
        return outputs

    return _run_stage(cfg, "cartogram", inputs, _cartogram_params(cfg), body)


def read_distorted(path) -> dict:
    """``{scenario: [Layer, ...]}`` from a distorted-layers CSV."""
    groups: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            scen, name, part, seq, x, y, kind = row
            g = groups.setdefault(scen, {}).setdefault(name, {"kind": kind, "parts": {}})
            g["parts"].setdefault(int(part), []).append((int(seq), float(x), float(y)))
    out = {}
    for scen, lays in groups.items():
        out[scen] = [carto.Layer(name, g["kind"],
                                 [np.array([(x, y) for _, x, y in sorted(g["parts"][p])])
                                  for p in sorted(g["parts"])])
                     for name, g in lays.items()]
    return out


def _write_frames(frames_dir: Path, docs) -> list:
    frames_dir.mkdir(parents=True, exist_ok=True)
    for old in frames_dir.glob("frame_*.svg"):
        old.unlink()
    paths = []
    for i, doc in docs:
        p = frames_dir / FRAME_PATTERN.format(i)
        p.write_text(doc, encoding="utf-8")
        paths.append(p)
    return paths


def _render_params(cfg: RunConfig) -> dict:
    return {"modes": list(cfg.render_mode), "ramp": [list(cfg.ramp_breaks), list(cfg.ramp_colors)],
            "floor": cfg.floor_pct, "fps": cfg.fps, "canvas": cfg.canvas_px,
            "height": cfg.height_scale, "isoline": cfg.isoline_min, "weekday": cfg.weekday,
            "interval": cfg.slot_interval_min, "direction": cfg.direction,
            "slots": cfg.n_slots}


def cmd_render(cfg: RunConfig) -> bool:
    inputs = [cfg.out / ACCESS, cfg.out / BASELINE, cfg.out / ZONES_USED]
    if cfg.layers_file or cfg.path("layers").is_file():
        inputs.append(cfg.path("layers"))
    if "cartogram" in cfg.render_mode:
        inputs += [cfg.out / SCALES] + [cfg.out / _distorted(d) for d in _directions(cfg)]
    for p in inputs:
        if not p.is_file():
            raise FileNotFoundError(f"{p} missing; run the earlier stages first")

    def body():
        return render_all(cfg)

    return _run_stage(cfg, "render", inputs, _render_params(cfg), body)


def render_all(cfg: RunConfig) -> list:
    out = cfg.out
    grid = read_zones(out / ZONES_USED, cfg.cell_size_m, _center_of(cfg))
    field = read_access(out / ACCESS, out / BASELINE, cfg.floor_pct, cfg.n_slots)
    layers = carto.read_layers(cfg.path("layers")) if cfg.path("layers").is_file() else []
    ramp: ColorRamp = cfg.ramp()
    slots = SlotSchedule(cfg.n_slots, cfg.slot_interval_min * 60.0)
    size = cfg.canvas_px
    internal = grid.internal
    cells = [grid.cell_bounds(z) for z in internal]
    bounds = (min(c[0] for c in cells), min(c[1] for c in cells),
              max(c[2] for c in cells), max(c[3] for c in cells))
    map_frame = FrameSpec(size, size, square_extent(bounds, 0.08))
    map_layers = [lay for lay in layers if lay.name != "center"]
    outputs = []

    def pct_map(s):
        return {z: field.pct[s, o] for o, z in enumerate(field.zone_ids)}

    def label(s):
        return f"{cfg.weekday} {slots.label(s)}"

    if "choropleth" in cfg.render_mode:
        d = out / "frames_choropleth"
        docs = ((s, render_choropleth(map_frame.with_label(label(s)), grid, pct_map(s), ramp,
                                      map_layers)) for s in range(slots.count))
        outputs += _write_frames(d, docs)
        emit_animation(d, slots.count, cfg.fps)
        outputs.append(d / "animation.txt")
        base_max = float(np.nanmax(field.baseline)) if len(field.baseline) else 1.0
        ref_ramp = ColorRamp.equal_interval(0.0, base_max if base_max > 0 else 1.0, 6)
        ref = render_choropleth(map_frame.with_label(f"{cfg.weekday} free flow (absolute)"),
                                grid, dict(zip(field.zone_ids, field.baseline)), ref_ramp,
                                map_layers)
        (out / "reference.svg").write_text(ref, encoding="utf-8")
        outputs.append(out / "reference.svg")

    if "extrusion" in cfg.render_mode:
        d = out / "frames_extrusion"
        view = ExtrusionView(height_scale=cfg.height_scale, floor_pct=cfg.floor_pct)
        ex_frame = FrameSpec(size, int(size * 0.7), bounds)
        docs = ((s, render_extrusion(ex_frame.with_label(label(s)), grid, pct_map(s), ramp, view,
                                     map_layers)) for s in range(slots.count))
        outputs += _write_frames(d, docs)
        emit_animation(d, slots.count, cfg.fps)
        outputs.append(d / "animation.txt")

    if "cartogram" in cfg.render_mode:
        scales = {}
        with open(out / SCALES, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                scales[row["direction"]] = (float(row["scale_km_per_min"]),
                                            (float(row["center_x"]), float(row["center_y"])))
        for direction in _directions(cfg):
            scale, center = scales[direction]
            scen = read_distorted(out / _distorted(direction))
            # frames follow the computed slots in order; a subset gives a shorter animation
            shown = sorted(int(k) for k in scen if k != "freeflow")
            if not shown:
                continue
            reach = 0.0
            for lays in list(scen.values()) + [layers]:
                for lay in lays:
                    for p in lay.parts:
                        if len(p):
                            reach = max(reach, float(np.hypot(p[:, 0] - center[0],
                                                              p[:, 1] - center[1]).max()))
            reach = reach * 1.05 if reach > 0 else 1000.0
            frame = FrameSpec(size, size, (center[0] - reach, center[1] - reach,
                                           center[0] + reach, center[1] + reach))
            radii = carto.isoline_radii(cfg.isoline_min, scale, reach)
            minutes = [cfg.isoline_min * (k + 1) for k in range(len(radii))]
            d = out / f"frames_cartogram_{direction}"
            docs = ((i, render_cartogram(
                frame.with_label(f"{label(s)} {direction} center"), scen[f"{s:04d}"], center,
                radii, minutes, geographic=layers)) for i, s in enumerate(shown))
            outputs += _write_frames(d, docs)
            emit_animation(d, len(shown), cfg.fps)
            outputs.append(d / "animation.txt")
    return outputs


def cmd_all(cfg: RunConfig) -> None:
    if cfg.synthetic:
        cmd_synth(cfg)
    cmd_matrix(cfg)
    cmd_access(cfg)
    if cfg.path("layers").is_file():
        cmd_cartogram(cfg)
    elif "cartogram" in cfg.render_mode:
        cfg.render_mode = tuple(m for m in cfg.render_mode if m != "cartogram")
    cmd_render(cfg)
