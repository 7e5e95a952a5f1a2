"""Tracks, Frenet transforms and vehicle models."""

import functools
import json

import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgsqp.track import (
    ParametricTrack,
    Segment,
    TrackError,
    bundled_track,
    frenet_pose,
    frenet_to_inertial,
    load_track,
    track_from_dict,
)
from dgsqp.vehicle import (
    ODES,
    ModelError,
    VehicleParams,
    frenet_to_inertial_state,
    full_scale_params,
    load_vehicle_params,
    step_dynamic_frenet,
    step_dynamic_inertial,
    step_kinematic_frenet,
    step_kinematic_inertial,
)
from oracles import rk4_order

# representative states and inputs for each model, away from singularities
MODEL_POINTS = {
    "kinematic_frenet": ([1.5, 3.0, 0.1, 0.05], [0.5, 0.3]),
    "dynamic_frenet": ([1.5, 0.05, 0.4, 3.0, 0.1, 0.05], [0.5, 0.3]),
    "kinematic_inertial": ([1.5, 0.2, -0.1, 0.3], [0.5, 0.3]),
    "dynamic_inertial": ([1.5, 0.05, 0.4, 0.2, -0.1, 0.3], [0.5, 0.3]),
}


def straight_track(length=10.0):
    return ParametricTrack([Segment.straight(length, 1.0, 1.0)])


class TestTrackGeometry:
    def test_unit_speed(self, l_track):
        s = np.linspace(0, l_track.length, 1000, endpoint=False)
        t = l_track.tangent_vector(s)
        np.testing.assert_allclose(np.linalg.norm(t, axis=-1), 1.0, atol=1e-12)

    def test_closed_track_closes(self, l_track):
        assert l_track.closed
        a = l_track.position(np.float64(l_track.length - 1e-9))
        np.testing.assert_allclose(a, l_track.position(np.float64(0.0)), atol=1e-6)

    def test_bundled_dimensions(self, l_track):
        assert 15 < l_track.length < 19
        assert float(l_track.width_left(np.float64(0))) + float(l_track.width_right(np.float64(0))) == pytest.approx(1.1)

    def test_arc_curvature_sign(self):
        left = ParametricTrack([Segment.arc(2.0, 90, 1, 1)])
        right = ParametricTrack([Segment.arc(2.0, -90, 1, 1)])
        assert float(left.curvature(np.float64(1.0))) == pytest.approx(0.5)
        assert float(right.curvature(np.float64(1.0))) == pytest.approx(-0.5)

    def test_straight_has_zero_curvature(self):
        assert float(straight_track().curvature(np.float64(3.0))) == 0.0

    def test_junction_belongs_to_next_segment(self):
        t = ParametricTrack([Segment.straight(1.0, 1, 1), Segment.arc(1.0, 90, 1, 1)])
        assert float(t.curvature(np.float64(1.0))) == 1.0
        assert float(t.curvature(np.float64(1.0 - 1e-12))) == 0.0

    def test_wrap_is_continuous(self, l_track):
        eps = 1e-7
        a = l_track.position(np.float64(l_track.length - eps))
        b = l_track.position(np.float64(l_track.length + eps))
        assert np.linalg.norm(a - b) < 1e-6

    def test_open_track_not_closing_is_fine_closed_rejected(self):
        with pytest.raises(TrackError):
            ParametricTrack([Segment.straight(1.0, 1, 1)], closed=True)

    @pytest.mark.parametrize("seg", [
        {"type": "zigzag", "length_or_radius": 1.0, "width_left": 1, "width_right": 1},
        {"type": "straight", "length_or_radius": -1.0, "width_left": 1, "width_right": 1},
        {"type": "straight", "length_or_radius": 1.0, "width_left": 0, "width_right": 1},
    ])
    def test_malformed_segments(self, seg):
        with pytest.raises(TrackError):
            track_from_dict({"segments": [seg]})

    def test_json_roundtrip(self, tmp_path, l_track):
        path = tmp_path / "t.json"
        path.write_text(json.dumps(l_track.to_dict()))
        again = load_track(path)
        assert again.length == pytest.approx(l_track.length)

    def test_spline_reference_close_to_track(self, l_track):
        path = l_track.smoothed()
        s = np.linspace(0, l_track.length, 2000, endpoint=False)
        assert np.max(np.linalg.norm(path.position(s) - l_track.position(s), axis=-1)) < 1e-3
        np.testing.assert_allclose(np.linalg.norm(path.tangent_vector(s), axis=-1), 1.0, atol=1e-3)


class TestFrenet:
    def test_round_trip(self, l_track):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(300):
            s = rng.uniform(0, l_track.length)
            e = rng.uniform(-0.45, 0.45)
            if abs(e * float(l_track.curvature(np.float64(s)))) >= 0.9:
                continue
            p = np.asarray(frenet_to_inertial(l_track, np.float64(s), np.float64(e)))
            pose = frenet_pose(l_track, p)
            ds = abs(pose.s - s)
            ds = min(ds, l_track.length - ds)
            worst = max(worst, ds, abs(pose.e_y - e))
        assert worst <= 1e-9

    def test_heading_error_wrapped(self):
        pose = frenet_pose(straight_track(), np.array([1.0, 0.0]), psi=2 * np.pi + 0.1)
        assert pose.e_psi == pytest.approx(0.1)

    def test_tie_is_flagged(self):
        # the center of a full circle is equidistant from every point
        t = ParametricTrack([Segment.arc(1.0, 180, 0.5, 0.5), Segment.arc(1.0, 180, 0.5, 0.5)], closed=True)
        pose = frenet_pose(t, np.array([0.0, 1.0]))
        assert pose.ambiguous

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.0, 9.9), st.floats(-0.9, 0.9))
    def test_straight_round_trip(self, s, e):
        t = straight_track()
        p = np.asarray(frenet_to_inertial(t, np.float64(s), np.float64(e)))
        np.testing.assert_allclose(p, [s, e], atol=1e-12)
        pose = frenet_pose(t, p)
        assert pose.s == pytest.approx(s, abs=1e-9) and pose.e_y == pytest.approx(e, abs=1e-9)


class TestVehicleModels:
    @pytest.mark.parametrize("model", list(ODES))
    def test_rk4_order(self, model, l_track, params):
        x, u = MODEL_POINTS[model]
        # the low-speed tire dynamics are stiff (|lambda| ~ 50 1/s); measure below the stability edge
        ode = functools.partial(ODES[model], p=params, track=l_track)
        order, _ = rk4_order(ode, jnp.asarray(x), jnp.asarray(u), 0.01)
        assert order >= 3.7

    def test_frenet_and_inertial_agree(self, l_track, params):
        rng = np.random.default_rng(1)
        for _ in range(20):
            s = rng.uniform(0, l_track.length)
            xf = np.array([1.5, 0.05, 0.3, s, rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)])
            u = np.array([rng.uniform(-1, 1), rng.uniform(-0.3, 0.3)])
            nxt_f = step_dynamic_frenet(xf, u, params, l_track, substeps=10)
            nxt_i = step_dynamic_inertial(frenet_to_inertial_state("dynamic", xf, l_track), u, params, substeps=10)
            seg_change = l_track.segment_index(np.float64(s)) != l_track.segment_index(np.float64(nxt_f[3]))
            if seg_change:
                continue  # curvature jumps inside the step are outside the smooth regime
            mapped = frenet_to_inertial_state("dynamic", nxt_f, l_track)
            np.testing.assert_allclose(mapped[:5], nxt_i[:5], atol=1e-6)

    def test_kinematic_straight_constant_speed(self, params):
        x = step_kinematic_frenet([1.0, 0.0, 0.0, 0.0], [0.0, 0.0], params, straight_track())
        np.testing.assert_allclose(x, [1.0, 0.1, 0.0, 0.0], atol=1e-14)

    def test_inertial_kinematic_heading(self, params):
        x = step_kinematic_inertial([1.0, 0.0, 0.0, np.pi / 2], [0.0, 0.0], params)
        np.testing.assert_allclose(x, [1.0, 0.0, 0.1, np.pi / 2], atol=1e-14)

    def test_singularity_guard(self, params):
        arc = ParametricTrack([Segment.arc(1.0, 90, 2.0, 2.0)])
        with pytest.raises(ModelError):
            step_kinematic_frenet([1.0, 0.5, 1.0, 0.0], [0.0, 0.0], params, arc)

    def test_speed_floor(self, params):
        with pytest.raises(ModelError):
            step_dynamic_inertial([0.05, 0, 0, 0, 0, 0], [0, 0], params)

    def test_param_file(self, tmp_path):
        path = tmp_path / "car.toml"
        path.write_text("mass = 3.0\nl_f = 0.2\n")
        p = load_vehicle_params(path)
        assert p.mass == 3.0 and p.l_r == 0.13
        path.write_text("wings = 2\n")
        with pytest.raises(ValueError):
            load_vehicle_params(path)

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            VehicleParams(mass=-1.0)
        with pytest.raises(ValueError):
            VehicleParams(a_min=1.0, a_max=0.0)

    def test_full_scale_set(self):
        p = full_scale_params()
        assert (p.l_f, p.l_r, p.mass, p.D_f) == (1.5, 1.4, 1200.0, 12000.0)

    def test_bundled_hairpin(self):
        t = bundled_track("hairpin")
        assert not t.closed
        assert float(t.width_left(np.float64(260.0))) == 5.0
