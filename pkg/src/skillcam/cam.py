"""Per-frame class contribution maps and their feedback exports.

The map for class c at frame t is the class row of the output head's
weights dotted with the final convolutional feature maps at t (biases play
no part). Because every convolution preserves the frame count, the map is
frame-aligned with the input trial and needs no upsampling; averaging a
class's map over frames reproduces that class's bias-free logit exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model as model_mod
from .data import Skill, Trial
from .errors import ConfigError
from .model import SkillNet

GRADIENT_STOPS = 256


@dataclass
class CamMap:
    """Contribution scores, one row per class, one column per frame."""

    values: np.ndarray  # (3, l) float32
    trial: Trial
    predicted: Skill

    def __post_init__(self):
        if self.values.shape != (3, self.trial.series.n_frames):
            raise ConfigError(
                f"map shape {self.values.shape} does not match trial length "
                f"{self.trial.series.n_frames}"
            )


def compute_cam(net: SkillNet, trial: Trial) -> CamMap:
    """Run the network on a trial and weight its final feature maps per class.

    The trial is preprocessed with the model's stored normalisation, so maps
    line up with what the classifier actually saw.
    """
    x = model_mod.preprocess(net, trial.series.values)
    _, probs, a3 = model_mod.forward(net, x)
    values = (net.head.weights @ a3).astype(np.float32)
    return CamMap(values=values, trial=trial, predicted=Skill(int(np.argmax(probs))))


def normalize_cam(cam: CamMap, skill: Skill) -> np.ndarray:
    """Min-max normalise one class row to [0, 1]; constant rows map to 0.5."""
    row = cam.values[int(skill)].astype(np.float64)
    lo, hi = float(row.min()), float(row.max())
    if hi == lo:
        return np.full(row.shape, 0.5)
    return (row - lo) / (hi - lo)


def export_cam_csv(cam: CamMap, path) -> None:
    """Write ``frame,time_s,cam_N,cam_I,cam_E,pred`` rows, one per frame."""
    rate = cam.trial.series.frame_rate_hz
    lines = ["frame,time_s,cam_N,cam_I,cam_E,pred"]
    for t in range(cam.values.shape[1]):
        vals = ",".join(f"{cam.values[c, t]:.6f}" for c in range(3))
        lines.append(f"{t},{t / rate:.6f},{vals},{cam.predicted.letter}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def heat_color(value: float) -> str:
    """Blue -> white -> red gradient; 0.5 maps to white, 1.0 to pure red."""
    v = min(max(float(value), 0.0), 1.0)
    if v <= 0.5:
        t = v / 0.5
        r = g = int(round(255 * t))
        b = 255
    else:
        t = (v - 0.5) / 0.5
        r = 255
        g = b = int(round(255 * (1.0 - t)))
    return f"#{r:02x}{g:02x}{b:02x}"


def export_trajectory_svg(
    trial: Trial,
    cam: CamMap,
    skill: Skill,
    channels: tuple[int, int] = (0, 1),
    path=None,
    width: int = 640,
    height: int = 640,
) -> str:
    """Render the 2-D trajectory of two channels, heat-coloured by the map.

    Segment i (joining frames i and i+1) is coloured by the normalised map
    value at frame i; red marks the frames that contributed most to
    ``skill``. Returns the SVG text and writes it when ``path`` is given.
    """
    c0, c1 = channels
    n_channels = trial.series.n_channels
    if not (0 <= c0 < n_channels and 0 <= c1 < n_channels) or c0 == c1:
        raise ConfigError(
            f"channel pair {channels} invalid for a {n_channels}-channel trial"
        )
    xs = trial.series.values[c0].astype(np.float64)
    ys = trial.series.values[c1].astype(np.float64)
    heat = normalize_cam(cam, skill)

    margin = 48.0
    legend_h = 46.0
    span_x = float(xs.max() - xs.min()) or 1.0
    span_y = float(ys.max() - ys.min()) or 1.0
    scale = min((width - 2 * margin) / span_x, (height - 2 * margin - legend_h) / span_y)

    def px(v):
        return margin + (v - xs.min()) * scale

    def py(v):
        # flip: SVG y grows downward
        return height - legend_h - margin - (v - ys.min()) * scale

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{margin}" y="24" font-family="sans-serif" font-size="14">'
        f"trajectory (ch {c0} vs ch {c1}), heat = class "
        f"{skill.letter} contribution</text>",
    ]
    for i in range(len(xs) - 1):
        parts.append(
            f'<line x1="{px(xs[i]):.3f}" y1="{py(ys[i]):.3f}" '
            f'x2="{px(xs[i + 1]):.3f}" y2="{py(ys[i + 1]):.3f}" '
            f'stroke="{heat_color(heat[i])}" stroke-width="2.5" '
            f'stroke-linecap="round"/>'
        )
    # legend: a discretised gradient bar with low/high labels
    bar_y = height - legend_h + 6
    bar_w = width - 2 * margin
    for i in range(GRADIENT_STOPS):
        x0 = margin + bar_w * i / GRADIENT_STOPS
        parts.append(
            f'<rect x="{x0:.2f}" y="{bar_y}" '
            f'width="{bar_w / GRADIENT_STOPS + 0.5:.2f}" height="12" '
            f'fill="{heat_color(i / (GRADIENT_STOPS - 1))}"/>'
        )
    parts.append(
        f'<text x="{margin}" y="{bar_y + 26}" font-family="sans-serif" '
        f'font-size="12">low contribution</text>'
    )
    parts.append(
        f'<text x="{margin + bar_w}" y="{bar_y + 26}" font-family="sans-serif" '
        f'font-size="12" text-anchor="end">high contribution</text>'
    )
    parts.append("</svg>")
    svg = "\n".join(parts) + "\n"
    if path is not None:
        Path(path).write_text(svg, encoding="utf-8")
    return svg
