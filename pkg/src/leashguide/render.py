"""
Static SVG rendering of maps, planned waypoints and simulated trajectories.

Output is a pure function of the inputs: coordinates are printed with a
fixed number of decimals and elements are emitted in a fixed order, so the
same input always yields the same bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .obstacles import ObstacleSet

ROBOT_COLOR = "#1f5fbf"
HUMAN_COLOR = "#e8871e"
SLACK_COLOR = "#c0392b"
OBSTACLE_COLOR = "#555555"
WAYPOINT_COLOR = "#2e8b57"


@dataclass(frozen=True)
class RenderSpec:
    width: int = 800                 # px
    height: int = 600                # px
    scale: float = 0.01              # meters per pixel
    center: tuple | None = None      # world point at the canvas center; None fits the content
    obstacles: bool = True
    robot_path: bool = True
    human_path: bool = True
    slack: bool = True
    waypoints: bool = True

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise ValueError("canvas size must be positive")


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


class _Canvas:
    def __init__(self, spec: RenderSpec, center):
        self.spec = spec
        self.cx, self.cy = float(center[0]), float(center[1])

    def px(self, x, y) -> tuple[str, str]:
        s = self.spec
        u = s.width / 2.0 + (x - self.cx) / s.scale
        v = s.height / 2.0 - (y - self.cy) / s.scale
        return _fmt(u), _fmt(v)

    def points(self, xy) -> str:
        return " ".join(",".join(self.px(x, y)) for x, y in xy)

    def length(self, r) -> str:
        return _fmt(r / self.spec.scale)


def _content_center(obstacles: ObstacleSet, paths) -> tuple[float, float]:
    pts = [p for p in paths if p is not None and len(p)]
    if obstacles.circles:
        r = obstacles.radii[:, None]
        c = obstacles.centers
        pts += [c - r, c + r]
    if not pts:
        return 0.0, 0.0
    allp = np.vstack(pts)
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    return float(0.5 * (lo[0] + hi[0])), float(0.5 * (lo[1] + hi[1]))


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive index ranges where ``mask`` holds, extended one sample so runs connect."""
    out = []
    k, n = 0, mask.size
    while k < n:
        if mask[k]:
            j = k
            while j + 1 < n and mask[j + 1]:
                j += 1
            out.append((k, min(j + 1, n - 1)))
            k = j + 1
        else:
            k += 1
    return out


def render_svg(obstacles: ObstacleSet = ObstacleSet(), robot=None, human=None, modes=None,
               waypoints=None, spec: RenderSpec = RenderSpec(), title: str | None = None) -> str:
    """SVG document for a map plus optional robot/human paths and waypoints.

    ``robot`` and ``human`` are (n, 2) position arrays; ``modes`` (n,) marks
    slack samples with 0 and restyles those stretches of both paths.
    ``waypoints`` is a sequence of configurations (x, y, ...).
    """
    robot = None if robot is None else np.asarray(robot, dtype=float).reshape(-1, 2)
    human = None if human is None else np.asarray(human, dtype=float).reshape(-1, 2)
    wps = None if waypoints is None else np.asarray([list(w)[:2] for w in waypoints],
                                                    dtype=float).reshape(-1, 2)
    center = spec.center if spec.center is not None else \
        _content_center(obstacles, [robot, human, wps])
    cv = _Canvas(spec, center)
    w, h = int(spec.width), int(spec.height)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
    ]
    if title:
        out.append(f"<title>{escape(title)}</title>")
    out.append(f'<rect id="background" x="0" y="0" width="{w}" height="{h}" fill="#ffffff"/>')

    if spec.obstacles and obstacles.circles:
        out.append(f'<g id="obstacles" fill="{OBSTACLE_COLOR}" stroke="none">')
        for c in obstacles.circles:
            x, y = cv.px(*c.center)
            out.append(f'<circle cx="{x}" cy="{y}" r="{cv.length(c.radius)}"/>')
        out.append("</g>")

    slack = None
    if modes is not None:
        slack = np.asarray(modes).reshape(-1) == 0

    for name, path, color, on in (("robot", robot, ROBOT_COLOR, spec.robot_path),
                                  ("human", human, HUMAN_COLOR, spec.human_path)):
        if not on or path is None or len(path) == 0:
            continue
        out.append(f'<polyline id="{name}-path" class="{name}" fill="none" stroke="{color}" '
                   f'stroke-width="2" points="{cv.points(path)}"/>')
        if spec.slack and slack is not None and slack.size == len(path):
            for a, b in _runs(slack):
                out.append(f'<polyline class="slack {name}" fill="none" stroke="{SLACK_COLOR}" '
                           f'stroke-width="3" stroke-dasharray="6,4" '
                           f'points="{cv.points(path[a:b + 1])}"/>')

    if spec.waypoints and wps is not None and len(wps):
        out.append(f'<g id="waypoints" fill="{WAYPOINT_COLOR}" stroke="none">')
        for x, y in wps:
            u, v = cv.px(x, y)
            out.append(f'<circle class="waypoint" cx="{u}" cy="{v}" r="3"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_simlog(simlog, obstacles: ObstacleSet = ObstacleSet(), spec: RenderSpec = RenderSpec(),
                  waypoints: Sequence | None = None) -> str:
    robot = np.column_stack([simlog.column("x"), simlog.column("y")])
    human = np.column_stack([simlog.column("xh"), simlog.column("yh")])
    return render_svg(obstacles, robot, human, simlog.column("mode"), waypoints, spec,
                      title=None if not simlog.status else f"status: {simlog.status}")


def render_waypoints(waypoints: Sequence, obstacles: ObstacleSet = ObstacleSet(),
                     spec: RenderSpec = RenderSpec()) -> str:
    """Planned route: waypoints plus the robot polyline through them."""
    robot = np.asarray([list(w)[:2] for w in waypoints], dtype=float).reshape(-1, 2)
    return render_svg(obstacles, robot if len(robot) else None, None, None, waypoints, spec)
