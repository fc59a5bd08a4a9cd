"""Run configuration: ``key = value`` files, CLI overrides and validation."""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Optional

from .network import WEEKDAYS
from .synth import SynthSpec

OUTPUT_ENV = "TDACCESS_OUTPUT_DIR"
RENDER_MODES = ("choropleth", "extrusion", "cartogram")
DIRECTIONS = ("from", "to", "both")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_float(v):
    s = str(v).strip().lower()
    return None if s in ("auto", "") else float(s)


def _opt_int(v):
    s = str(v).strip().lower()
    return None if s in ("auto", "") else int(s)


def _list(v):
    if isinstance(v, (list, tuple)):
        return tuple(v)
    return tuple(p.strip() for p in str(v).split(",") if p.strip())


@dataclass
class RunConfig:
    output_dir: str = "out"
    data_dir: Optional[str] = None
    nodes_file: Optional[str] = None
    edges_file: Optional[str] = None
    profiles_file: Optional[str] = None
    zones_file: Optional[str] = None
    layers_file: Optional[str] = None
    mask_file: Optional[str] = None
    opportunities_file: Optional[str] = None

    weekday: str = "Wed"
    beta: float = -0.065
    slot_interval_min: float = 15.0
    slot_count: Optional[int] = None
    floor_pct: float = 50.0
    idw_power: float = 2.0
    cartogram_scale: Optional[float] = None
    densify_m: float = 250.0
    isoline_min: float = 15.0
    buffer_min: float = 15.0
    snap_radius_m: Optional[float] = None
    cell_size_m: float = 2000.0
    center_zone_id: Optional[int] = None
    ramp_breaks: tuple = ()
    ramp_colors: tuple = ()
    fps: float = 4.0
    workers: int = 1
    seed: int = 0
    render_mode: tuple = RENDER_MODES
    direction: str = "both"
    cartogram_slots: str = "all"
    canvas_px: int = 800
    height_scale: float = 2.0
    synthetic: bool = False
    export_csv: bool = False
    synth: SynthSpec = field(default_factory=SynthSpec)

    # -------------------------------------------------------------- paths

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    @property
    def data(self) -> Path:
        return Path(self.data_dir) if self.data_dir else self.out / "data"

    def path(self, key: str) -> Path:
        v = getattr(self, f"{key}_file")
        return Path(v) if v else self.data / f"{key}.csv"

    @property
    def slots_per_day(self) -> int:
        return int(round(1440.0 / self.slot_interval_min))

    @property
    def n_slots(self) -> int:
        return self.slot_count if self.slot_count is not None else self.slots_per_day

    # -------------------------------------------------------------- checks

    def validate(self) -> "RunConfig":
        def bad(name, why):
            raise ConfigError(f"{name}: {why}")

        if self.weekday not in WEEKDAYS:
            bad("weekday", f"must be one of {', '.join(WEEKDAYS)}")
        if not (self.beta < 0 and math.isfinite(self.beta)):
            bad("beta", "must be negative")
        iv = self.slot_interval_min * 60.0
        if not iv > 0 or abs(86400.0 / iv - round(86400.0 / iv)) > 1e-9:
            bad("slot_interval_min", "must divide 24 h")
        if self.slot_count is not None and not 1 <= self.slot_count <= self.slots_per_day:
            bad("slot_count", f"must be in 1..{self.slots_per_day}")
        if not 0 <= self.floor_pct < 100:
            bad("floor_pct", "must be in [0, 100)")
        if not self.idw_power > 0:
            bad("idw_power", "must be > 0")
        if self.cartogram_scale is not None and not self.cartogram_scale > 0:
            bad("cartogram_scale", "must be > 0 or auto")
        for name in ("densify_m", "isoline_min", "cell_size_m", "fps", "height_scale"):
            if not getattr(self, name) > 0:
                bad(name, "must be > 0")
        if not self.buffer_min >= 0:
            bad("buffer_min", "must be >= 0")
        if self.snap_radius_m is not None and not self.snap_radius_m > 0:
            bad("snap_radius_m", "must be > 0 or auto")
        if self.workers < 1:
            bad("workers", "must be >= 1")
        if self.canvas_px < 100:
            bad("canvas_px", "must be >= 100")
        for m in self.render_mode:
            if m not in RENDER_MODES:
                bad("render_mode", f"unknown mode {m!r}")
        if self.direction not in DIRECTIONS:
            bad("direction", f"must be one of {', '.join(DIRECTIONS)}")
        cs = self.cartogram_slots.strip().lower()
        if cs not in ("all", "none"):
            try:
                idx = [int(p) for p in cs.split(",")]
            except ValueError:
                bad("cartogram_slots", "must be all, none or a comma list of slot indices")
            if any(not 0 <= i < self.n_slots for i in idx):
                bad("cartogram_slots", f"indices must be in 0..{self.n_slots - 1}")
        if self.ramp_breaks or self.ramp_colors:
            try:
                from .render import ColorRamp
                ColorRamp(tuple(float(b) for b in self.ramp_breaks), self.ramp_colors)
            except (ValueError, TypeError) as exc:
                bad("ramp_breaks/ramp_colors", str(exc))
        try:
            self.synth.validate()
        except ValueError as exc:
            bad("synth", str(exc))
        return self

    def require_files(self, *keys: str) -> None:
        for key in keys:
            p = self.path(key)
            if not p.is_file():
                raise ConfigError(f"{key}_file: {p} does not exist")

    def slot_indices_for_cartogram(self) -> list:
        cs = self.cartogram_slots.strip().lower()
        if cs == "all":
            return list(range(self.n_slots))
        if cs == "none":
            return []
        return sorted({int(p) for p in cs.split(",")})

    def ramp(self):
        from .render import ColorRamp
        if self.ramp_breaks:
            return ColorRamp(tuple(float(b) for b in self.ramp_breaks), self.ramp_colors)
        return ColorRamp.equal_interval(self.floor_pct, 100.0, 6)


_PARSERS = {
    "beta": float, "slot_interval_min": float, "slot_count": _opt_int, "floor_pct": float,
    "idw_power": float, "cartogram_scale": _opt_float, "densify_m": float, "isoline_min": float,
    "buffer_min": float, "snap_radius_m": _opt_float, "cell_size_m": float,
    "center_zone_id": _opt_int, "ramp_breaks": _list, "ramp_colors": _list, "fps": float,
    "workers": int, "seed": int, "render_mode": _list, "canvas_px": int, "height_scale": float,
    "synthetic": _bool, "export_csv": _bool,
}


def _synth_parser(name: str):
    t = {f.name: f.type for f in fields(SynthSpec)}[name]
    return {"float": float, "int": int, "str": str}.get(str(t), str)


def apply(cfg: RunConfig, values: Mapping[str, str]) -> RunConfig:
    """Return a copy of ``cfg`` with raw string ``values`` parsed in."""
    cfg = dataclasses.replace(cfg)
    synth_updates = {}
    known = {f.name for f in fields(RunConfig)} - {"synth"}
    synth_fields = {f.name for f in fields(SynthSpec)}
    for key, raw in values.items():
        key = key.strip()
        if key.startswith("synth_") and key[6:] in synth_fields:
            try:
                synth_updates[key[6:]] = _synth_parser(key[6:])(str(raw).strip())
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {raw!r}") from None
            continue
        if key not in known:
            raise ConfigError(f"{key}: unknown configuration key")
        parser = _PARSERS.get(key, lambda v: str(v).strip() or None)
        try:
            setattr(cfg, key, parser(raw))
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    if synth_updates:
        cfg.synth = dataclasses.replace(cfg.synth, **synth_updates)
    return cfg


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_config(path=None, overrides: Optional[Mapping[str, str]] = None,
                env: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Defaults, then the file, then the output-dir env var, then overrides.

    Relative file paths in the config are resolved against its directory.
    """
    env = os.environ if env is None else env
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError:
            raise ConfigError(f"config: cannot read {p}") from None
        values = parse_config_text(text, str(p))
        base = p.parent
        for k in list(values):
            if (k.endswith("_file") or k in ("output_dir", "data_dir")) and values[k] \
                    and not Path(values[k]).is_absolute():
                values[k] = str(base / values[k])
        cfg = apply(cfg, values)
    if env.get(OUTPUT_ENV):
        cfg.output_dir = env[OUTPUT_ENV]
    if overrides:
        cfg = apply(cfg, overrides)
    return cfg.validate()
