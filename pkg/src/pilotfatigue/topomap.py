"""SVG scalp maps: one disk per class, dots coloured by band power, grey ``*`` on significant channels."""
from __future__ import annotations

from typing import Mapping, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .core import BandDef, FatigueClass, Montage

PANEL = 220          # px per class panel
RADIUS = 90          # head radius in px
DOT = 7

# blue -> white -> red, sampled at 5 stops
_STOPS = np.array([[49, 54, 149], [116, 173, 209], [247, 247, 247], [244, 109, 67], [165, 0, 38]],
                  dtype=float)


def colour(v: float) -> str:
    """Hex colour for ``v`` in [0, 1] on a diverging blue-red ramp."""
    v = float(np.clip(v, 0.0, 1.0)) * (len(_STOPS) - 1)
    i = min(int(v), len(_STOPS) - 2)
    rgb = _STOPS[i] + (v - i) * (_STOPS[i + 1] - _STOPS[i])
    return "#{:02x}{:02x}{:02x}".format(*np.rint(rgb).astype(int))


def render_topomap(montage: Montage, band: BandDef, class_power: Mapping[FatigueClass, np.ndarray],
                   significant: Sequence[str] = (), title: Optional[str] = None,
                   provenance: Optional[str] = None) -> str:
    """SVG text for one band.

    ``class_power[c]`` holds the mean band power per EEG channel (montage
    order) for class ``c``.  All panels share one colour scale.
    """
    eeg = montage.eeg
    classes = [c for c in FatigueClass if c in class_power]
    if not classes:
        raise ValueError("no class powers to draw")
    vals = np.stack([np.asarray(class_power[c], dtype=float) for c in classes])
    if vals.shape[1] != len(eeg):
        raise ValueError(f"expected {len(eeg)} channel values, got {vals.shape[1]}")
    lo, hi = float(vals.min()), float(vals.max())
    span = hi - lo if hi > lo else 1.0
    sig = set(significant)
    width, height = PANEL * len(classes), PANEL + 50
    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif">']
    if provenance:
        out.append(f"<!-- {escape(provenance)} -->")
    label = title or f"{band.name} ({band.lo:g}-{band.hi:g} Hz)"
    out.append(f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="14">'
               f'{escape(label)}</text>')
    for p, cls in enumerate(classes):
        cx, cy = PANEL * p + PANEL / 2, 30 + PANEL / 2
        out.append(f'<g id="{cls.name}">')
        out.append(f'<polygon points="{cx - 10:.1f},{cy - RADIUS + 2:.1f} {cx:.1f},'
                   f'{cy - RADIUS - 12:.1f} {cx + 10:.1f},{cy - RADIUS + 2:.1f}" '
                   f'fill="none" stroke="#333"/>')
        out.append(f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="{RADIUS}" fill="none" '
                   f'stroke="#333" stroke-width="1.5"/>')
        for ch, v in zip(eeg, vals[p]):
            x, y = cx + ch.x * RADIUS * 0.92, cy - ch.y * RADIUS * 0.92
            out.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="{DOT}" '
                       f'fill="{colour((v - lo) / span)}" stroke="#555" stroke-width="0.5">'
                       f'<title>{escape(ch.name)}: {v:.4g}</title></circle>')
            if ch.name in sig:
                out.append(f'<text x="{x + DOT:.1f}" y="{y - DOT + 2:.1f}" font-size="14" '
                           f'fill="#808080" class="sig">*</text>')
        out.append(f'<text x="{cx:.1f}" y="{cy + RADIUS + 20:.1f}" text-anchor="middle" '
                   f'font-size="12">{cls.name}</text>')
        out.append("</g>")
    out.append(f'<text x="4" y="{height - 4}" font-size="10">scale {lo:.4g} .. {hi:.4g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def significant_channels(stats) -> list[str]:
    return [s.channel for s in stats if s.significant]
