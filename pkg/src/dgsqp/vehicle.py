"""Kinematic and dynamic bicycle models in Frenet and inertial coordinates.

State layouts::

    kinematic Frenet    (v, s, e_y, e_psi)          input (a, delta)
    dynamic Frenet      (v_x, v_y, omega, s, e_y, e_psi)   input (a_x, delta)
    kinematic inertial  (v, x, y, psi)
    dynamic inertial    (v_x, v_y, omega, x, y, psi)

All models are discretized with classic fourth-order Runge-Kutta.
"""

from __future__ import annotations

import dataclasses
import functools
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from dgsqp.track import ParametricTrack

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

SINGULARITY_GUARD = 1e-3
VX_FLOOR = 0.1

MODELS = ("kinematic_frenet", "dynamic_frenet", "kinematic_inertial", "dynamic_inertial")
STATE_DIM = {"kinematic": 4, "dynamic": 6}
INPUT_DIM = 2


class ModelError(ValueError):
    """State outside the region where a vehicle model is defined."""


@dataclass(frozen=True)
class VehicleParams:
    l_f: float = 0.13
    l_r: float = 0.13
    mass: float = 2.2
    I_z: float = 0.025
    c_d: float = 0.1
    B_f: float = 5.0
    C_f: float = 1.3
    D_f: float = 10.0
    B_r: float = 5.0
    C_r: float = 1.3
    D_r: float = 10.0
    a_min: float = -1.0
    a_max: float = 1.0
    delta_min: float = -0.45
    delta_max: float = 0.45
    dt: float = 0.1
    length: float = 0.4
    v_top: float = 3.0  # top speed, sets the default arcspeed bound
    # "appendix": D sin(C + atan(B a)); "magic": D sin(C atan(B a))
    tire_model: str = "appendix"

    def __post_init__(self):
        for name in ("l_f", "l_r", "mass", "I_z", "dt", "length", "v_top"):
            if getattr(self, name) <= 0:
                raise ValueError(f"vehicle parameter {name} must be positive")
        if self.a_min >= self.a_max or self.delta_min >= self.delta_max:
            raise ValueError("input bounds must satisfy lower < upper")
        if self.tire_model not in ("appendix", "magic"):
            raise ValueError(f"unknown tire model {self.tire_model!r}")

    @property
    def u_lower(self) -> np.ndarray:
        return np.array([self.a_min, self.delta_min])

    @property
    def u_upper(self) -> np.ndarray:
        return np.array([self.a_max, self.delta_max])


def full_scale_params() -> VehicleParams:
    return VehicleParams(
        l_f=1.5, l_r=1.4, mass=1200.0, I_z=1800.0, c_d=0.05,
        B_f=10.0, C_f=1.4, D_f=12000.0, B_r=10.0, C_r=1.4, D_r=12000.0,
        a_min=-8.0, a_max=5.0, delta_min=-0.35, delta_max=0.35, length=4.5, v_top=80.0,
    )


def load_vehicle_params(path: str | Path) -> VehicleParams:
    """Read a flat key-value (TOML) vehicle parameter file."""
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    known = {f.name for f in dataclasses.fields(VehicleParams)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown vehicle parameters: {sorted(unknown)}")
    return VehicleParams(**data)


# -- continuous-time models -----------------------------------------------------


def slip_angle(delta, p: VehicleParams):
    return jnp.arctan(jnp.tan(delta) * p.l_f / (p.l_f + p.l_r))


def tire_slip_angles(v_x, v_y, omega, delta, p: VehicleParams):
    alpha_f = -jnp.arctan((omega * p.l_f + v_y) / v_x) + delta
    alpha_r = jnp.arctan((omega * p.l_r - v_y) / v_x)
    return alpha_f, alpha_r


def tire_forces(alpha_f, alpha_r, p: VehicleParams):
    if p.tire_model == "appendix":
        f_f = p.D_f * jnp.sin(p.C_f + jnp.arctan(p.B_f * alpha_f))
        f_r = p.D_r * jnp.sin(p.C_r + jnp.arctan(p.B_r * alpha_r))
    else:
        f_f = p.D_f * jnp.sin(p.C_f * jnp.arctan(p.B_f * alpha_f))
        f_r = p.D_r * jnp.sin(p.C_r * jnp.arctan(p.B_r * alpha_r))
    return f_f, f_r


def _body_rates(v_x, v_y, omega, a_x, delta, p: VehicleParams):
    alpha_f, alpha_r = tire_slip_angles(v_x, v_y, omega, delta, p)
    f_f, f_r = tire_forces(alpha_f, alpha_r, p)
    dv_x = a_x - f_f * jnp.sin(delta) / p.mass - p.c_d * v_x + omega * v_y
    dv_y = (f_r + f_f * jnp.cos(delta)) / p.mass - omega * v_x
    domega = (p.l_f * f_f * jnp.cos(delta) - p.l_r * f_r) / p.I_z
    return dv_x, dv_y, domega


def kinematic_frenet_ode(x, u, p: VehicleParams, track: ParametricTrack):
    v, s, e_y, e_psi = x[0], x[1], x[2], x[3]
    a, delta = u[0], u[1]
    beta = slip_angle(delta, p)
    kappa = track.curvature(s)
    s_dot = v * jnp.cos(e_psi + beta) / (1 - e_y * kappa)
    return jnp.stack([
        a,
        s_dot,
        v * jnp.sin(e_psi + beta),
        v * jnp.sin(beta) / p.l_r - kappa * s_dot,
    ])


def dynamic_frenet_ode(x, u, p: VehicleParams, track: ParametricTrack):
    v_x, v_y, omega, s, e_y, e_psi = x[0], x[1], x[2], x[3], x[4], x[5]
    a_x, delta = u[0], u[1]
    dv_x, dv_y, domega = _body_rates(v_x, v_y, omega, a_x, delta, p)
    kappa = track.curvature(s)
    s_dot = (v_x * jnp.cos(e_psi) - v_y * jnp.sin(e_psi)) / (1 - e_y * kappa)
    return jnp.stack([
        dv_x,
        dv_y,
        domega,
        s_dot,
        v_x * jnp.sin(e_psi) + v_y * jnp.cos(e_psi),
        omega - kappa * s_dot,
    ])


def kinematic_inertial_ode(x, u, p: VehicleParams, track=None):
    v, psi = x[0], x[3]
    a, delta = u[0], u[1]
    beta = slip_angle(delta, p)
    return jnp.stack([
        a,
        v * jnp.cos(beta + psi),
        v * jnp.sin(beta + psi),
        v * jnp.sin(beta) / p.l_r,
    ])


def dynamic_inertial_ode(x, u, p: VehicleParams, track=None):
    v_x, v_y, omega, psi = x[0], x[1], x[2], x[5]
    a_x, delta = u[0], u[1]
    dv_x, dv_y, domega = _body_rates(v_x, v_y, omega, a_x, delta, p)
    return jnp.stack([
        dv_x,
        dv_y,
        domega,
        v_x * jnp.cos(psi) - v_y * jnp.sin(psi),
        v_x * jnp.sin(psi) + v_y * jnp.cos(psi),
        omega,
    ])


ODES = {
    "kinematic_frenet": kinematic_frenet_ode,
    "dynamic_frenet": dynamic_frenet_ode,
    "kinematic_inertial": kinematic_inertial_ode,
    "dynamic_inertial": dynamic_inertial_ode,
}


def rk4(ode: Callable, x, u, dt: float, substeps: int = 1):
    h = dt / substeps
    for _ in range(substeps):
        k1 = ode(x, u)
        k2 = ode(x + 0.5 * h * k1, u)
        k3 = ode(x + 0.5 * h * k2, u)
        k4 = ode(x + h * k3, u)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def discrete_dynamics(
    model: str, params: VehicleParams, track: ParametricTrack | None = None, substeps: int = 1
) -> Callable:
    """Traceable one-step map x+ = f(x, u) for ``model`` at ``params.dt``."""
    if model not in ODES:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")
    if model.endswith("frenet") and track is None:
        raise ValueError("Frenet models need a track")
    ode = functools.partial(ODES[model], p=params, track=track)
    return lambda x, u: rk4(ode, x, u, params.dt, substeps)


@functools.lru_cache(maxsize=64)
def _jitted_step(model: str, params: VehicleParams, track, substeps: int):
    return jax.jit(discrete_dynamics(model, params, track, substeps))


def _check_frenet(state, kappa_idx: tuple[int, int], track: ParametricTrack):
    s, e_y = state[kappa_idx[0]], state[kappa_idx[1]]
    margin = 1.0 - e_y * float(track.curvature(np.float64(s)))
    if margin <= SINGULARITY_GUARD:
        raise ModelError(f"curvature singularity: 1 - e_y*kappa = {margin:.3g}")


def _check_vx(state):
    if state[0] < VX_FLOOR:
        raise ModelError(f"v_x = {state[0]:.3g} below floor {VX_FLOOR}")


def _step(model, state, inp, params, track, substeps):
    fn = _jitted_step(model, params, track, substeps)
    return np.asarray(fn(jnp.asarray(state, dtype=float), jnp.asarray(inp, dtype=float)))


def step_kinematic_frenet(state, inp, params: VehicleParams, track: ParametricTrack, substeps: int = 1):
    state = np.asarray(state, dtype=float)
    _check_frenet(state, (1, 2), track)
    return _step("kinematic_frenet", state, inp, params, track, substeps)


def step_dynamic_frenet(state, inp, params: VehicleParams, track: ParametricTrack, substeps: int = 1):
    state = np.asarray(state, dtype=float)
    _check_vx(state)
    _check_frenet(state, (3, 4), track)
    return _step("dynamic_frenet", state, inp, params, track, substeps)


def step_kinematic_inertial(state, inp, params: VehicleParams, substeps: int = 1):
    return _step("kinematic_inertial", np.asarray(state, dtype=float), inp, params, None, substeps)


def step_dynamic_inertial(state, inp, params: VehicleParams, substeps: int = 1):
    state = np.asarray(state, dtype=float)
    _check_vx(state)
    return _step("dynamic_inertial", state, inp, params, None, substeps)


def frenet_to_inertial_state(model: str, x, track: ParametricTrack) -> np.ndarray:
    """Map a Frenet-model state to the matching inertial-model state."""
    from dgsqp.track import frenet_to_inertial

    x = np.asarray(x, dtype=float)
    if model.startswith("kinematic"):
        v, s, e_y, e_psi = x
        pos = frenet_to_inertial(track, np.float64(s), np.float64(e_y))
        return np.array([v, pos[0], pos[1], float(track.tangent(np.float64(s))) + e_psi])
    v_x, v_y, omega, s, e_y, e_psi = x
    pos = frenet_to_inertial(track, np.float64(s), np.float64(e_y))
    return np.array([v_x, v_y, omega, pos[0], pos[1], float(track.tangent(np.float64(s))) + e_psi])
