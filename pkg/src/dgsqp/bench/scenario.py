"""Scenario configuration files for the bench harness.

A scenario is a TOML file naming the model, formulation, track, vehicles,
weights, horizons, sampling spec, warm-start mode, seed and solver settings.
File references are resolved relative to the scenario file first and then
against the bundled data directory, so the bundled scenarios work from any
working directory.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dgsqp.game import DynamicGame
from dgsqp.racing.games import AgentWeights, GameVariant, RacingWeights, build_game
from dgsqp.racing.sampling import SamplingSpec, sample_initial_conditions
from dgsqp.racing.warmstart import Raceline, load_raceline, warm_start_from_game
from dgsqp.solver import SolverConfig
from dgsqp.track import ParametricTrack, load_track
from dgsqp.vehicle import VehicleParams, load_vehicle_params

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
BUNDLED = ("scenario1", "scenario2", "scenario3")
WARM_START_MODES = ("pid", "tracking")

_TOP_KEYS = {
    "id", "model", "formulation", "track", "vehicles", "horizon", "warm_start",
    "raceline", "seed", "weights", "sampling", "solver",
}
_AGENT_KEYS = {"R", "P", "q_own", "q_opp", "radius"}


class ScenarioError(ValueError):
    """Unreadable or inconsistent scenario configuration."""


@dataclass(frozen=True, eq=False)
class Scenario:
    id: str
    model: str
    formulation: str
    track: ParametricTrack
    params: tuple[VehicleParams, ...]
    weights: RacingWeights
    horizons: tuple[int, ...]
    sampling: SamplingSpec
    warm_start_mode: str = "pid"
    raceline: Raceline | None = None
    seed: int = 0
    solver: SolverConfig = SolverConfig()

    def variant(self, formulation: str | None = None, model: str | None = None) -> GameVariant:
        return GameVariant(model or self.model, formulation or self.formulation)

    def sample(self, count: int, seed: int | None = None, model: str | None = None) -> list[np.ndarray]:
        """Joint Frenet initial conditions; deterministic under ``seed``."""
        return sample_initial_conditions(
            self.track, self.sampling, count, self.seed if seed is None else seed,
            model=model or self.model, raceline=self.raceline,
        )

    def build(self, x0, horizon: int, formulation: str | None = None, model: str | None = None) -> DynamicGame:
        return build_game(self.variant(formulation, model), self.track, self.params, self.weights, x0, horizon)

    def warm_start(self, game: DynamicGame) -> np.ndarray:
        return warm_start_from_game(game, self.warm_start_mode, self.raceline).inputs

    def with_model(self, model: str) -> "Scenario":
        return dataclasses.replace(self, model=model)


def _resolve(name: str, base: Path, subdir: str = "") -> Path:
    for candidate in (base / name, DATA_DIR / subdir / name, DATA_DIR / name):
        if candidate.is_file():
            return candidate
    raise ScenarioError(f"cannot find file {name!r} (looked next to the scenario and in the bundled data)")


def _weights(data: dict) -> RacingWeights:
    data = dict(data)
    shared = {k: data.pop(k) for k in list(data) if k in _AGENT_KEYS}
    agents = data.pop("agents", None)
    try:
        if agents is None:
            agent = AgentWeights(**{k: tuple(v) if isinstance(v, list) else v for k, v in shared.items()})
            agents = (agent, agent)
        else:
            agents = tuple(
                AgentWeights(**{k: tuple(v) if isinstance(v, list) else v for k, v in {**shared, **a}.items()})
                for a in agents
            )
        return RacingWeights(agents=agents, **data)
    except TypeError as exc:
        raise ScenarioError(f"bad weights section: {exc}") from exc


def _sampling(data: dict) -> SamplingSpec:
    data = dict(data)
    for key in ("speed_range", "s_range"):
        if key in data:
            data[key] = tuple(float(v) for v in data[key])
    for key in ("speed_ratio_min", "raceline_band", "speed_band"):
        if isinstance(data.get(key), str) and data[key].lower() == "none":
            data[key] = None
    try:
        return SamplingSpec(**data)
    except TypeError as exc:
        raise ScenarioError(f"bad sampling section: {exc}") from exc


def scenario_from_dict(data: dict, base: Path | None = None) -> Scenario:
    """Build a `Scenario` from parsed TOML; ``base`` anchors relative file names."""
    base = Path(base) if base is not None else DATA_DIR
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
    for key in ("model", "track", "vehicles"):
        if key not in data:
            raise ScenarioError(f"scenario lacks required key {key!r}")
    try:
        track = load_track(_resolve(data["track"], base))
        params = tuple(load_vehicle_params(_resolve(v, base, "vehicles")) for v in data["vehicles"])
        horizons = data.get("horizon", [10, 15])
        horizons = tuple(int(h) for h in (horizons if isinstance(horizons, list) else [horizons]))
        if not horizons or min(horizons) < 1:
            raise ScenarioError("horizons must be positive")
        mode = data.get("warm_start", "pid")
        if mode not in WARM_START_MODES:
            raise ScenarioError(f"unknown warm-start mode {mode!r}")
        raceline = None
        if "raceline" in data:
            raceline = load_raceline(_resolve(data["raceline"], base), track)
        scenario = Scenario(
            id=str(data.get("id", "scenario")),
            model=data["model"],
            formulation=data.get("formulation", "approximate"),
            track=track,
            params=params,
            weights=_weights(data.get("weights", {})),
            horizons=horizons,
            sampling=_sampling(data.get("sampling", {})),
            warm_start_mode=mode,
            raceline=raceline,
            seed=int(data.get("seed", 0)),
            solver=SolverConfig.from_dict(data.get("solver", {})),
        )
        scenario.variant()  # validates model and formulation
    except ScenarioError:
        raise
    except (ValueError, KeyError, OSError) as exc:
        raise ScenarioError(str(exc)) from exc
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"malformed scenario {path}: {exc}") from exc
    return scenario_from_dict(data, path.parent)


def bundled_scenario(name: str) -> Scenario:
    if name not in BUNDLED:
        raise ScenarioError(f"no bundled scenario {name!r}; choose from {BUNDLED}")
    return load_scenario(DATA_DIR / "scenarios" / f"{name}.toml")


def resolve_scenario(ref: str | Path) -> Scenario:
    """A scenario file path or the name of a bundled scenario."""
    if str(ref) in BUNDLED and not Path(ref).is_file():
        return bundled_scenario(str(ref))
    return load_scenario(ref)
