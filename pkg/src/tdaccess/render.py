"""SVG map frames (choropleth, oblique extrusion, cartogram) and the animation manifest.

Documents are built as plain strings with fixed number formatting, so the
same inputs always give byte-identical output.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from .cartogram import Layer

FRAME_PATTERN = "frame_{:04d}.svg"
MANIFEST_NAME = "animation.txt"
DEFAULT_FPS = 4.0
DEFAULT_COLORS = ("#d73027", "#fc8d59", "#fee08b", "#d9ef8b", "#91cf60", "#1a9850")
GAP_FILL = "none"


class RenderError(ValueError):
    pass


def _f(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


@dataclass(frozen=True)
class ColorRamp:
    """Classes split at ``breaks``; a value equal to a break goes to the upper class."""

    breaks: tuple
    colors: tuple

    def __post_init__(self):
        b = tuple(float(x) for x in self.breaks)
        if any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise RenderError("ramp breaks must be strictly increasing")
        if len(self.colors) != len(b) + 1:
            raise RenderError(f"{len(b)} breaks need {len(b) + 1} colors, got {len(self.colors)}")
        for c in self.colors:
            if not (isinstance(c, str) and len(c) == 7 and c[0] == "#"):
                raise RenderError(f"bad color {c!r}")
            int(c[1:], 16)
        object.__setattr__(self, "breaks", b)
        object.__setattr__(self, "colors", tuple(c.lower() for c in self.colors))

    @classmethod
    def equal_interval(cls, lo: float = 50.0, hi: float = 100.0, n_classes: int = 6,
                       colors: Optional[Sequence[str]] = None) -> "ColorRamp":
        if n_classes < 1 or not hi > lo:
            raise RenderError("equal_interval needs hi > lo and n_classes >= 1")
        if colors is None:
            if n_classes != len(DEFAULT_COLORS):
                raise RenderError(f"give colors for {n_classes} classes")
            colors = DEFAULT_COLORS
        breaks = tuple(lo + (hi - lo) * k / n_classes for k in range(1, n_classes))
        return cls(breaks, tuple(colors))

    def classify(self, value: float) -> int:
        return bisect.bisect_right(self.breaks, value)

    def color(self, value: float) -> str:
        return self.colors[self.classify(value)]


@dataclass(frozen=True)
class FrameSpec:
    """Canvas in pixels and the map extent (m) it shows; Y axis flipped."""

    width_px: int
    height_px: int
    extent: tuple  # xmin, ymin, xmax, ymax
    margin_px: float = 20.0
    label: str = ""

    def __post_init__(self):
        xmin, ymin, xmax, ymax = map(float, self.extent)
        if not (xmax > xmin and ymax > ymin):
            raise RenderError(f"degenerate extent {self.extent}")
        if self.width_px <= 2 * self.margin_px or self.height_px <= 2 * self.margin_px:
            raise RenderError("canvas too small for its margin")
        object.__setattr__(self, "extent", (xmin, ymin, xmax, ymax))

    @property
    def scale(self) -> float:
        xmin, ymin, xmax, ymax = self.extent
        return min((self.width_px - 2 * self.margin_px) / (xmax - xmin),
                   (self.height_px - 2 * self.margin_px) / (ymax - ymin))

    def to_px(self, x, y):
        xmin, ymin, xmax, ymax = self.extent
        s = self.scale
        ox = (self.width_px - (xmax - xmin) * s) / 2.0
        oy = (self.height_px - (ymax - ymin) * s) / 2.0
        px = ox + (np.asarray(x, dtype=float) - xmin) * s
        py = self.height_px - oy - (np.asarray(y, dtype=float) - ymin) * s
        return px, py

    def with_label(self, label: str) -> "FrameSpec":
        return FrameSpec(self.width_px, self.height_px, self.extent, self.margin_px, label)


def square_extent(bounds: Sequence[float], pad: float = 0.05) -> tuple:
    xmin, ymin, xmax, ymax = bounds
    cx, cy = (xmin + xmax) / 2.0, (ymin + ymax) / 2.0
    half = max(xmax - xmin, ymax - ymin) / 2.0 * (1.0 + pad)
    half = half if half > 0 else 1.0
    return (cx - half, cy - half, cx + half, cy + half)


def _header(w: int, h: int) -> list:
    return ['<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" '
            f'viewBox="0 0 {w} {h}">',
            f'<rect x="0" y="0" width="{w}" height="{h}" fill="#ffffff"/>']


def _label(frame: FrameSpec) -> str:
    return (f'<text x="{_f(frame.margin_px)}" y="{_f(frame.margin_px)}" font-family="sans-serif" '
            f'font-size="16" dominant-baseline="hanging">{escape(frame.label)}</text>')


def _points_attr(px, py) -> str:
    return " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(px, py))


def _layer_markup(frame: FrameSpec, layers: Sequence[Layer], dx: float = 0.0) -> list:
    out = []
    for lay in layers:
        out.append(f'<g class={quoteattr(lay.name)}>')
        for part in lay.parts:
            if len(part) == 0:
                continue
            px, py = frame.to_px(part[:, 0], part[:, 1])
            px = px + dx
            if lay.kind == "polygon":
                out.append(f'<polygon points="{_points_attr(px, py)}" fill="none" '
                           f'stroke="#333333" stroke-width="1"/>')
            elif lay.kind == "line":
                color = "#2b6cb0" if "river" in lay.name else "#333333"
                out.append(f'<polyline points="{_points_attr(px, py)}" fill="none" '
                           f'stroke="{color}" stroke-width="1.5"/>')
            else:
                code = lay.name.split(":", 1)[1] if ":" in lay.name else lay.name
                for a, b in zip(px, py):
                    out.append(f'<circle cx="{_f(a)}" cy="{_f(b)}" r="3" fill="#000000"/>')
                    out.append(f'<text x="{_f(a + 5)}" y="{_f(b - 5)}" font-family="sans-serif" '
                               f'font-size="11">{escape(code)}</text>')
        out.append("</g>")
    return out


def _legend(frame: FrameSpec, ramp: ColorRamp, unit: str = "%") -> list:
    out = ['<g class="legend">']
    x = frame.width_px - frame.margin_px - 90
    y0 = frame.margin_px
    labels = [f"{b:.4g}" for b in ramp.breaks]
    for k, color in enumerate(ramp.colors):
        y = y0 + 16 * k
        if k:
            text = f"≥ {labels[k - 1]}{unit}"
        else:
            text = f"< {labels[0]}{unit}" if labels else ""
        out.append(f'<rect x="{_f(x)}" y="{_f(y)}" width="12" height="12" fill="{color}"/>')
        out.append(f'<text x="{_f(x + 16)}" y="{_f(y + 10)}" font-family="sans-serif" '
                   f'font-size="11">{escape(text)}</text>')
    out.append("</g>")
    return out


def _zone_value(values: Mapping, zid: int) -> Optional[float]:
    v = values.get(zid)
    if v is None:
        return None
    v = float(v)
    return None if math.isnan(v) else v


def render_choropleth(frame: FrameSpec, grid, pct: Mapping, ramp: ColorRamp,
                      layers: Sequence[Layer] = ()) -> str:
    """One filled square per internal zone with a value; gaps are left empty."""
    out = _header(frame.width_px, frame.height_px)
    out.append('<g class="zones" stroke="#ffffff" stroke-width="0.5">')
    for z in sorted(grid.internal, key=lambda z: z.zone_id):
        v = _zone_value(pct, z.zone_id)
        if v is None:
            continue
        x0, y0, x1, y1 = grid.cell_bounds(z)
        px0, py1 = frame.to_px(x0, y1)
        px1, py0 = frame.to_px(x1, y0)
        out.append(f'<rect id="z{z.zone_id}" x="{_f(px0)}" y="{_f(py1)}" '
                   f'width="{_f(px1 - px0)}" height="{_f(py0 - py1)}" fill="{ramp.color(v)}"/>')
    out.append("</g>")
    out += _layer_markup(frame, layers)
    out += _legend(frame, ramp)
    out.append(_label(frame))
    out.append("</svg>")
    return "\n".join(out) + "\n"


@dataclass(frozen=True)
class ExtrusionView:
    """Cabinet oblique view: north recedes up-right at ``angle_deg`` with
    depth foreshortened by ``depth_factor``; heights are vertical pixels."""

    height_scale: float = 2.0
    floor_pct: float = 50.0
    depth_factor: float = 0.5
    angle_deg: float = 45.0
    headroom_pct: float = 120.0

    def height_px(self, pct: float) -> float:
        return max(0.0, (pct - self.floor_pct) * self.height_scale)


def _shade(color: str, factor: float) -> str:
    r, g, b = (int(color[i:i + 2], 16) for i in (1, 3, 5))
    return "#{:02x}{:02x}{:02x}".format(*(int(round(c * factor)) for c in (r, g, b)))


class _Oblique:
    def __init__(self, frame: FrameSpec, view: ExtrusionView):
        xmin, ymin, xmax, ymax = frame.extent
        a = math.radians(view.angle_deg)
        self.kx = view.depth_factor * math.cos(a)
        self.ky = view.depth_factor * math.sin(a)
        self.xmin, self.ymin = xmin, ymin
        m = frame.margin_px
        head = view.height_px(view.headroom_pct)
        avail_w = frame.width_px - 2 * m
        avail_h = frame.height_px - 2 * m - head
        if avail_h <= 0:
            raise RenderError("canvas too short for the column headroom")
        dx, dy = xmax - xmin, ymax - ymin
        self.s = min(avail_w / (dx + self.kx * dy), avail_h / (self.ky * dy))
        self.ox = m + (avail_w - (dx + self.kx * dy) * self.s) / 2.0
        self.base = frame.height_px - m - (avail_h - self.ky * dy * self.s) / 2.0

    def __call__(self, x: float, y: float, h: float = 0.0) -> tuple:
        u = (x - self.xmin) * self.s
        d = (y - self.ymin) * self.s
        return self.ox + u + self.kx * d, self.base - self.ky * d - h

    def depth(self, x: float, y: float) -> float:
        return (y - self.ymin) - self.kx * (x - self.xmin)


def render_extrusion(frame: FrameSpec, grid, pct: Mapping, ramp: ColorRamp,
                     view: ExtrusionView = ExtrusionView(), layers: Sequence[Layer] = ()) -> str:
    """Zones raised as columns of height (pct - floor) * height_scale pixels.

    Columns are painted far-to-near (projected depth, ties by zone id).
    """
    proj = _Oblique(frame, view)
    out = _header(frame.width_px, frame.height_px)
    for lay in layers:
        if lay.kind == "point":
            continue
        out.append(f'<g class={quoteattr(lay.name)} fill="none" stroke="#999999" stroke-width="1">')
        for part in lay.parts:
            ring = list(part) + ([part[0]] if lay.kind == "polygon" else [])
            pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in (proj(x, y) for x, y in ring))
            out.append(f'<polyline points="{pts}"/>')
        out.append("</g>")
    cols = []
    for z in grid.internal:
        v = _zone_value(pct, z.zone_id)
        if v is None:
            continue
        cols.append((-proj.depth(z.centroid_x, z.centroid_y), z.zone_id, z, v))
    cols.sort(key=lambda c: (c[0], c[1]))
    out.append('<g class="columns" stroke="#444444" stroke-width="0.4" stroke-linejoin="round">')
    for _, zid, z, v in cols:
        x0, y0, x1, y1 = grid.cell_bounds(z)
        h = view.height_px(v)
        color = ramp.color(v)

        def poly(corners, fill, cls):
            pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in (proj(*c) for c in corners))
            return f'<polygon class="{cls}" points="{pts}" fill="{fill}"/>'

        out.append(f'<g id="z{zid}">')
        if h > 0:
            out.append(poly([(x0, y0, 0), (x1, y0, 0), (x1, y0, h), (x0, y0, h)],
                            _shade(color, 0.75), "front"))
            out.append(poly([(x1, y0, 0), (x1, y1, 0), (x1, y1, h), (x1, y0, h)],
                            _shade(color, 0.6), "side"))
            for cx, cy in ((x0, y0), (x1, y0), (x1, y1)):
                (ax, ay), (bx, by) = proj(cx, cy, 0), proj(cx, cy, h)
                out.append(f'<line x1="{_f(ax)}" y1="{_f(ay)}" x2="{_f(bx)}" y2="{_f(by)}"/>')
        out.append(poly([(x0, y0, h), (x1, y0, h), (x1, y1, h), (x0, y1, h)], color, "top"))
        out.append("</g>")
    out.append("</g>")
    out += _legend(frame, ramp)
    out.append(_label(frame))
    out.append("</svg>")
    return "\n".join(out) + "\n"


def column_top_offset(frame: FrameSpec, view: ExtrusionView, x: float, y: float, pct: float) -> float:
    """Vertical pixel distance between a column's base and top at (x, y)."""
    proj = _Oblique(frame, view)
    return proj(x, y, 0.0)[1] - proj(x, y, view.height_px(pct))[1]


def render_cartogram(frame: FrameSpec, distorted: Sequence[Layer], center: Sequence[float],
                     isoline_radii_m: Sequence[float] = (), isoline_minutes: Sequence[float] = (),
                     geographic: Optional[Sequence[Layer]] = None) -> str:
    """Distorted line-work with concentric travel-time circles.

    With ``geographic`` the canvas holds two equal panels: the geographic
    map on the left and the cartogram on the right.
    """
    panels = [geographic, distorted] if geographic is not None else [distorted]
    width = frame.width_px * len(panels)
    out = _header(width, frame.height_px)
    cx, cy = frame.to_px(center[0], center[1])
    for k, layers in enumerate(panels):
        dx = k * frame.width_px
        is_carto = layers is distorted
        out.append(f'<g class="{"cartogram" if is_carto else "geographic"}" '
                   f'transform="translate({dx},0)">')
        if is_carto:
            out.append('<g class="isolines" fill="none" stroke="#bbbbbb" stroke-dasharray="4 3">')
            for j, r in enumerate(isoline_radii_m):
                rp = r * frame.scale
                out.append(f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="{_f(rp)}"/>')
                if j < len(isoline_minutes):
                    out.append(f'<text x="{_f(cx + rp + 2)}" y="{_f(cy)}" font-family="sans-serif" '
                               f'font-size="10" stroke="none" fill="#777777">'
                               f'{escape(f"{isoline_minutes[j]:g} min")}</text>')
            out.append("</g>")
        out += _layer_markup(frame, [lay for lay in layers if lay.name != "center"])
        out.append(f'<circle class="center" cx="{_f(cx)}" cy="{_f(cy)}" r="4" fill="#c53030"/>')
        out.append("</g>")
    out.append(_label(frame))
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ------------------------------------------------------------------ animation

@dataclass(frozen=True)
class AnimationManifest:
    entries: tuple  # (index, filename, duration_s)

    @property
    def total_seconds(self) -> float:
        return sum(d for _, _, d in self.entries)

    def text(self) -> str:
        return "".join(f"{i}\t{name}\t{d:g}\n" for i, name, d in self.entries)


def emit_animation(frames_dir, n_slots: int, fps: float = DEFAULT_FPS,
                   manifest_name: str = MANIFEST_NAME) -> AnimationManifest:
    """Check one frame per slot exists and write the ordered frame list."""
    if not fps > 0:
        raise RenderError("fps must be > 0")
    d = Path(frames_dir)
    entries = []
    for i in range(n_slots):
        name = FRAME_PATTERN.format(i)
        if not (d / name).is_file():
            raise RenderError(f"missing frame {Path(name).stem} in {d}")
        entries.append((i, name, 1.0 / fps))
    manifest = AnimationManifest(tuple(entries))
    (d / manifest_name).write_text(manifest.text(), encoding="utf-8")
    return manifest


def read_manifest(path) -> AnimationManifest:
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            i, name, dur = line.split("\t")
            entries.append((int(i), name, float(dur)))
    return AnimationManifest(tuple(entries))
