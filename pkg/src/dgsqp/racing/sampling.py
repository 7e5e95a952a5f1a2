"""Seeded rejection sampling of joint head-to-head initial conditions."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from dgsqp.track import ParametricTrack, frenet_to_inertial
from dgsqp.vehicle import STATE_DIM

MAX_DRAWS = 10_000


class SamplingError(RuntimeError):
    """Rejection sampling exceeded its draw budget."""


@dataclass(frozen=True)
class SamplingSpec:
    car_length: float = 0.4
    gap_car_lengths: float = 1.2  # |s1 - s2| bound in car lengths
    speed_range: tuple[float, float] = (1.0, 2.0)
    speed_ratio_min: float | None = 0.75  # slower/faster; None disables the check
    lateral_fraction: float = 0.8  # |e_y| <= fraction * (half width - radius)
    radius: float = 0.15  # collision radius per agent
    s_range: tuple[float, float] | None = None  # leader progress window; whole track if None
    raceline_band: float | None = None  # sample e_y around a raceline instead
    speed_band: float | None = None  # with a raceline: speeds within this of the raceline speed

    def __post_init__(self):
        if self.speed_range[0] <= 0 or self.speed_range[0] > self.speed_range[1]:
            raise ValueError("speed range must be positive and ordered")
        if self.speed_ratio_min is not None and not 0 < self.speed_ratio_min <= 1:
            raise ValueError("speed ratio bound must lie in (0, 1]")


def _joint_state(model: str, s, e_y, v) -> np.ndarray:
    parts = []
    for si, ei, vi in zip(s, e_y, v):
        if model == "kinematic":
            parts.append([vi, si, ei, 0.0])
        else:
            parts.append([vi, 0.0, 0.0, si, ei, 0.0])
    return np.concatenate(parts)


def check_sample(track: ParametricTrack, spec: SamplingSpec, x0: np.ndarray, model: str) -> bool:
    """Re-check every sampling constraint on a joint state (two agents)."""
    n = STATE_DIM[model]
    si = 1 if model == "kinematic" else 3
    a, b = x0[:n], x0[n:2 * n]
    s = np.array([a[si], b[si]])
    e = np.array([a[si + 1], b[si + 1]])
    v = np.array([a[0], b[0]])
    gap = abs(s[0] - s[1])
    if track.closed:
        gap = min(gap, track.length - gap)
    if gap > spec.gap_car_lengths * spec.car_length + 1e-12:
        return False
    if v.min() <= 0:
        return False
    if spec.speed_ratio_min is not None and v.min() / v.max() < spec.speed_ratio_min - 1e-12:
        return False
    for k in range(2):
        if not -float(track.width_right(np.float64(s[k]))) <= e[k] <= float(track.width_left(np.float64(s[k]))):
            return False
    p = [np.asarray(frenet_to_inertial(track, np.float64(s[k]), np.float64(e[k]))) for k in range(2)]
    return bool(np.linalg.norm(p[0] - p[1]) >= 2 * spec.radius)


def sample_initial_conditions(
    track: ParametricTrack,
    spec: SamplingSpec,
    count: int,
    seed: int,
    model: str = "kinematic",
    raceline=None,
) -> list[np.ndarray]:
    """``count`` joint Frenet states; deterministic under ``seed``.

    Raises `SamplingError` when more than ``MAX_DRAWS`` draws are rejected.
    """
    rng = np.random.default_rng(seed)
    out: list[np.ndarray] = []
    draws = 0
    lo, hi = spec.s_range if spec.s_range is not None else (0.0, track.length)
    while len(out) < count:
        draws += 1
        if draws > MAX_DRAWS:
            raise SamplingError(f"rejection sampling exceeded {MAX_DRAWS} draws")
        s1 = rng.uniform(lo, hi)
        gap = rng.uniform(-1.0, 1.0) * spec.gap_car_lengths * spec.car_length
        s2 = s1 + gap
        if track.closed:
            s2 = s2 % track.length
        elif not 0.0 <= s2 <= track.length:
            continue
        s = np.array([s1, s2])
        e = np.empty(2)
        admissible = True
        for k in range(2):
            sk = np.float64(s[k])
            if spec.raceline_band is not None and raceline is not None:
                center = float(raceline.reference(sk)[0])
                e[k] = center + rng.uniform(-1, 1) * spec.raceline_band
            else:
                wl = float(track.width_left(sk)) - spec.radius
                wr = float(track.width_right(sk)) - spec.radius
                if wl + wr <= 0.0:  # the car does not fit at this arclength
                    admissible = False
                    break
                e[k] = rng.uniform(-wr, wl) * spec.lateral_fraction
        if not admissible:
            continue
        if spec.speed_band is not None and raceline is not None:
            v = np.array([float(raceline.reference(np.float64(s[k]))[1]) for k in range(2)])
            v = v + rng.uniform(-spec.speed_band, spec.speed_band, size=2)
        else:
            v_hi = rng.uniform(*spec.speed_range)
            ratio = spec.speed_ratio_min if spec.speed_ratio_min is not None else 0.0
            v = np.array([v_hi, rng.uniform(ratio, 1.0) * v_hi])
            rng.shuffle(v)
        x0 = _joint_state(model, s, e, v)
        if not check_sample(track, spec, x0, model):
            continue
        # keep clear of curvature singularities
        if any(1.0 - e[k] * float(track.curvature(np.float64(s[k]))) < 0.1 for k in range(2)):
            continue
        out.append(x0)
    return out


def record_seed(seed: int, index: int) -> int:
    """Per-record seed derived from (study seed, IC index), independent of scheduling."""
    digest = hashlib.blake2b(f"{seed}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")
