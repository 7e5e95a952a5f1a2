"""Arclength-parameterized race tracks built from straight and circular-arc pieces.

Every geometric query (`position`, `tangent`, `curvature`, widths) accepts
either numpy values or JAX arrays, so the same track object serves plain
numerical code and traced game functions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import jax
import jax.numpy as jnp
import numpy as np

CLOSURE_TOL = 1e-6
TIE_TOL = 1e-9


class TrackError(ValueError):
    """Raised for malformed track descriptions."""


@dataclass(frozen=True)
class Segment:
    kind: str
    length: float
    curvature: float
    width_left: float
    width_right: float

    @classmethod
    def straight(cls, length: float, width_left: float, width_right: float) -> "Segment":
        return cls("straight", float(length), 0.0, float(width_left), float(width_right))

    @classmethod
    def arc(
        cls, radius: float, sweep_deg: float, width_left: float, width_right: float
    ) -> "Segment":
        sweep = math.radians(sweep_deg)
        return cls(
            "arc",
            abs(sweep) * radius,
            math.copysign(1.0 / radius, sweep),
            float(width_left),
            float(width_right),
        )


class FrenetPose(NamedTuple):
    s: float
    e_y: float
    e_psi: float
    ambiguous: bool


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    xp = jnp if isinstance(a, jax.Array) else np
    w = xp.mod(a + np.pi, 2 * np.pi) - np.pi
    return xp.where(w == -np.pi, np.pi, w)


def _xp(*values):
    return jnp if any(isinstance(v, jax.Array) for v in values) else np


class ParametricTrack:
    """Piecewise straight/arc path with per-segment lateral widths.

    Segment intervals are half-open, ``[s_start, s_end)``, so a query at a
    junction returns the data of the segment that begins there. Queries
    outside ``[0, L]`` wrap on closed tracks and extend the first/last
    segment on open ones.
    """

    def __init__(
        self,
        segments: Sequence[Segment],
        start: tuple[float, float, float] = (0.0, 0.0, 0.0),
        closed: bool = False,
        name: str = "track",
    ):
        if not segments:
            raise TrackError("track needs at least one segment")
        for seg in segments:
            if seg.kind not in ("straight", "arc"):
                raise TrackError(f"unknown segment type {seg.kind!r}")
            if seg.length <= 0:
                raise TrackError("segment lengths must be positive")
            if seg.width_left <= 0 or seg.width_right <= 0:
                raise TrackError("track widths must be strictly positive")
        self.segments = tuple(segments)
        self.closed = closed
        self.name = name

        n = len(segments)
        self._s0 = np.zeros(n)
        self._x0 = np.zeros(n)
        self._y0 = np.zeros(n)
        self._phi0 = np.zeros(n)
        x, y, phi = map(float, start)
        s = 0.0
        for k, seg in enumerate(segments):
            self._s0[k], self._x0[k], self._y0[k], self._phi0[k] = s, x, y, phi
            dx, dy = _chord(seg.curvature, seg.length, phi)
            x, y = x + dx, y + dy
            phi += seg.curvature * seg.length
            s += seg.length
        self.length = s
        self._kappa = np.array([seg.curvature for seg in segments])
        self._seg_len = np.array([seg.length for seg in segments])
        self._wl = np.array([seg.width_left for seg in segments])
        self._wr = np.array([seg.width_right for seg in segments])
        self.end_pose = (x, y, phi)

        if closed:
            gap = math.hypot(x - start[0], y - start[1])
            turn = float(wrap_angle(np.float64(phi - start[2])))
            if gap > CLOSURE_TOL or abs(turn) > CLOSURE_TOL:
                raise TrackError(
                    f"closed track does not close: position gap {gap:.3g} m, "
                    f"heading gap {turn:.3g} rad"
                )

    # -- arclength bookkeeping -------------------------------------------------

    def wrap(self, s):
        xp = _xp(s)
        if self.closed:
            return xp.mod(s, self.length)
        return s

    def _locate(self, s):
        xp = _xp(s)
        s = self.wrap(s)
        s0 = xp.asarray(self._s0)
        idx = xp.clip(xp.searchsorted(s0, s, side="right") - 1, 0, len(self.segments) - 1)
        return xp, idx, s - s0[idx]

    def segment_index(self, s):
        return self._locate(s)[1]

    # -- geometry ---------------------------------------------------------------

    def position(self, s):
        """tau(s): inertial x-y point(s) on the centerline, shape (..., 2)."""
        xp, idx, ds = self._locate(s)
        kappa = xp.asarray(self._kappa)[idx]
        phi0 = xp.asarray(self._phi0)[idx]
        half = 0.5 * kappa * ds
        chord = ds * xp.sinc(half / np.pi)
        x = xp.asarray(self._x0)[idx] + chord * xp.cos(phi0 + half)
        y = xp.asarray(self._y0)[idx] + chord * xp.sin(phi0 + half)
        return xp.stack([x, y], axis=-1)

    def tangent(self, s):
        """Phi(s): continuous, piecewise-linear path heading."""
        xp, idx, ds = self._locate(s)
        return xp.asarray(self._phi0)[idx] + xp.asarray(self._kappa)[idx] * ds

    def curvature(self, s):
        xp, idx, _ = self._locate(s)
        return xp.asarray(self._kappa)[idx] + 0.0 * s

    def width_left(self, s):
        xp, idx, _ = self._locate(s)
        return xp.asarray(self._wl)[idx] + 0.0 * s

    def width_right(self, s):
        xp, idx, _ = self._locate(s)
        return xp.asarray(self._wr)[idx] + 0.0 * s

    def normal(self, s):
        phi = self.tangent(s)
        xp = _xp(phi)
        return xp.stack([-xp.sin(phi), xp.cos(phi)], axis=-1)

    def tangent_vector(self, s):
        phi = self.tangent(s)
        xp = _xp(phi)
        return xp.stack([xp.cos(phi), xp.sin(phi)], axis=-1)

    @property
    def min_half_width(self) -> float:
        return float(min(self._wl.min(), self._wr.min()))

    def smoothed(self, spacing: float = 0.1) -> "SplinePath":
        """Cubic-spline interpolant of the centerline (cached per spacing)."""
        cache = self.__dict__.setdefault("_smoothed", {})
        if spacing not in cache:
            cache[spacing] = SplinePath(self, spacing)
        return cache[spacing]

    # -- serialization ----------------------------------------------------------

    def to_dict(self) -> dict:
        segs = []
        for seg in self.segments:
            if seg.kind == "straight":
                segs.append({"type": "straight", "length_or_radius": seg.length})
            else:
                radius = 1.0 / abs(seg.curvature)
                sweep = math.degrees(math.copysign(seg.length / radius, seg.curvature))
                segs.append({"type": "arc", "length_or_radius": radius, "sweep_deg": sweep})
            segs[-1].update(width_left=seg.width_left, width_right=seg.width_right)
        return {
            "name": self.name,
            "closed": self.closed,
            "start": [float(self._x0[0]), float(self._y0[0]), float(self._phi0[0])],
            "segments": segs,
        }


class SplinePath:
    """Twice continuously differentiable stand-in for a track centerline.

    The piecewise-arc centerline has curvature jumps at segment joins, so any
    quantity that differentiates the path with respect to progress (such as
    the gradient of a lag-error penalty) jumps there too. This interpolates
    centerline samples every ``spacing`` metres with a cubic spline (periodic
    on closed tracks), which keeps curvature continuous while staying within
    about ``max|kappa| * spacing**2 / 8`` of the true path. Widths are taken
    from the underlying track.
    """

    def __init__(self, track: ParametricTrack, spacing: float = 0.1):
        from scipy.interpolate import CubicSpline

        if spacing <= 0:
            raise TrackError("spline spacing must be positive")
        self.base = track
        self.length = track.length
        self.closed = track.closed
        self.name = track.name
        n = max(int(math.ceil(track.length / spacing)), 4)
        self._h = track.length / n
        knots = np.linspace(0.0, track.length, n + 1)
        pts = np.asarray(track.position(knots[:-1]))
        if track.closed:
            pts = np.vstack([pts, pts[:1]])
            spline = CubicSpline(knots, pts, bc_type="periodic")
        else:
            pts = np.vstack([pts, np.asarray(track.position(np.float64(track.length)))[None]])
            spline = CubicSpline(knots, pts)
        self._coef = np.asarray(spline.c)  # (4, n, 2), highest power first
        self._n = n

    def wrap(self, s):
        return self.base.wrap(s)

    def _local(self, s):
        xp = _xp(s)
        s = self.wrap(s)
        idx = xp.clip(xp.floor(s / self._h).astype(int), 0, self._n - 1)
        t = s - idx * self._h
        c = xp.asarray(self._coef)[:, idx]  # (4, ..., 2)
        return xp, c, t[..., None]

    def position(self, s):
        xp, c, t = self._local(s)
        return ((c[0] * t + c[1]) * t + c[2]) * t + c[3]

    def _derivatives(self, s):
        xp, c, t = self._local(s)
        d1 = (3 * c[0] * t + 2 * c[1]) * t + c[2]
        d2 = 6 * c[0] * t + 2 * c[1]
        return xp, d1, d2

    def tangent_vector(self, s):
        xp, d1, _ = self._derivatives(s)
        return d1 / xp.sqrt(xp.sum(d1**2, axis=-1, keepdims=True))

    def tangent(self, s):
        xp, d1, _ = self._derivatives(s)
        return xp.arctan2(d1[..., 1], d1[..., 0])

    def normal(self, s):
        t = self.tangent_vector(s)
        xp = _xp(t)
        return xp.stack([-t[..., 1], t[..., 0]], axis=-1)

    def curvature(self, s):
        xp, d1, d2 = self._derivatives(s)
        cross = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
        return cross / xp.sum(d1**2, axis=-1) ** 1.5

    def width_left(self, s):
        return self.base.width_left(s)

    def width_right(self, s):
        return self.base.width_right(s)


def _chord(kappa: float, length: float, phi: float) -> tuple[float, float]:
    half = 0.5 * kappa * length
    c = length * np.sinc(half / np.pi)
    return c * math.cos(phi + half), c * math.sin(phi + half)


def track_from_dict(data: dict) -> ParametricTrack:
    segments = []
    try:
        for i, rec in enumerate(data["segments"]):
            kind = rec["type"]
            wl, wr = float(rec["width_left"]), float(rec["width_right"])
            if kind == "straight":
                segments.append(Segment.straight(float(rec["length_or_radius"]), wl, wr))
            elif kind == "arc":
                radius = float(rec["length_or_radius"])
                if radius <= 0:
                    raise TrackError(f"segment {i}: arc radius must be positive")
                segments.append(Segment.arc(radius, float(rec["sweep_deg"]), wl, wr))
            else:
                raise TrackError(f"segment {i}: unknown type {kind!r}")
    except KeyError as exc:
        raise TrackError(f"missing track field {exc}") from exc
    start = tuple(data.get("start", (0.0, 0.0, 0.0)))
    return ParametricTrack(
        segments, start=start, closed=bool(data.get("closed", False)), name=data.get("name", "track")
    )


def load_track(path: str | Path) -> ParametricTrack:
    """Load a track from a JSON segment list (see README for the schema)."""
    with open(path) as fh:
        return track_from_dict(json.load(fh))


def bundled_track(name: str) -> ParametricTrack:
    return load_track(Path(__file__).parent / "data" / f"{name}.json")


# -- Frenet transforms -------------------------------------------------------


def curvature(track: ParametricTrack, s):
    return track.curvature(s)


def tangent(track: ParametricTrack, s):
    return track.tangent(s)


def frenet_to_inertial(track: ParametricTrack, s, e_y):
    """p = tau(s) + e_y * n(s) with the left-pointing unit normal n."""
    p = track.position(s)
    n = track.normal(s)
    xp = _xp(p, e_y)
    return p + xp.asarray(e_y)[..., None] * n


def _project_segment(track: ParametricTrack, k: int, p: np.ndarray) -> tuple[float, float]:
    """Closest point on segment k: returns (local arclength, distance)."""
    x0, y0, phi0 = track._x0[k], track._y0[k], track._phi0[k]
    length, kappa = track._seg_len[k], track._kappa[k]
    d = p - np.array([x0, y0])
    if kappa == 0.0:
        ds = float(np.clip(d @ np.array([math.cos(phi0), math.sin(phi0)]), 0.0, length))
        foot = np.array([x0, y0]) + ds * np.array([math.cos(phi0), math.sin(phi0)])
        return ds, float(np.linalg.norm(p - foot))
    radius = 1.0 / abs(kappa)
    sgn = math.copysign(1.0, kappa)
    center = np.array([x0, y0]) + radius * sgn * np.array([-math.sin(phi0), math.cos(phi0)])
    theta0 = phi0 - sgn * math.pi / 2
    rel = p - center
    alpha = math.atan2(rel[1], rel[0])
    sweep = (sgn * (alpha - theta0)) % (2 * math.pi)
    candidates = [0.0, length]
    if sweep * radius <= length:
        candidates.append(sweep * radius)
    best = None
    for ds in candidates:
        th = theta0 + kappa * ds
        foot = center + radius * np.array([math.cos(th), math.sin(th)])
        dist = float(np.linalg.norm(p - foot))
        if best is None or dist < best[1] - 1e-15:
            best = (ds, dist)
    return best


def frenet_pose(track: ParametricTrack, p, psi: float = 0.0) -> FrenetPose:
    """Project an inertial pose onto the track: (s, e_y, e_psi).

    The progress is the global minimizer of ``||tau(s) - p||`` found segment by
    segment in closed form. Ties between distinct arclengths resolve to the
    smaller ``s`` and set ``ambiguous``.
    """
    p = np.asarray(p, dtype=float)
    hits = []
    for k in range(len(track.segments)):
        ds, dist = _project_segment(track, k, p)
        s = track._s0[k] + ds
        if track.closed and s >= track.length:
            s -= track.length
        hits.append((dist, s))
    dmin = min(h[0] for h in hits)
    close = sorted(s for d, s in hits if d <= dmin + TIE_TOL)
    s = close[0]
    ambiguous = False
    for other in close[1:]:
        gap = other - s
        if track.closed:
            gap = min(gap, track.length - gap)
        if gap > TIE_TOL:
            ambiguous = True
    phi = float(track.tangent(np.float64(s)))
    normal = np.array([-math.sin(phi), math.cos(phi)])
    e_y = float(normal @ (p - track.position(np.float64(s))))
    e_psi = float(wrap_angle(np.float64(psi - phi)))
    return FrenetPose(float(s), e_y, e_psi, ambiguous)
