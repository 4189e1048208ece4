"""Closed-loop episode runner: scan, commit, and servo to touchdown.

An episode is a pure function of (scenario, params, seed). The scan
phase flies a lawnmower pattern at constant altitude while beliefs
accumulate; once a feasible track crosses the commit threshold the
selector is never re-entered and the terminal phase servos the vehicle
over the committed center and descends. Tracking loss beyond the grace
window aborts to hover.

Vehicle motion is kinematic: a first-order velocity response with time
constant ``t_v`` followed by Euler position integration. Commands from
the servo are given in camera axes with an up-positive vertical
component; the fixed yaw rotates them into the world frame.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import belief as bel
from . import perception as per
from . import selector as sel
from . import servo as srv
from .params import Params, validate
from .scene import (CameraModel, DepthFrame, Scenario, World, build_world,
                    corrupt, nadir_camera, render_true_depth)

Observer = Callable[[str, dict], None]

TELEMETRY_FIELDS = (
    "t", "phase", "x", "y", "z", "vx", "vy", "vz",
    "cmd_vx", "cmd_vy", "cmd_vz",
    "n_regions", "n_tracks", "best_belief", "best_feasible_belief",
    "n_features", "s_u", "s_v", "e_norm", "depth_z",
)

TRACK_FIELDS = ("t", "id", "f", "s", "o", "l1", "l0", "b")


@dataclass
class VehicleState:
    position: np.ndarray   # (3,) world, m
    velocity: np.ndarray   # (3,) world, m/s
    yaw: float = 0.0


@dataclass
class EpisodeResult:
    outcome: str                          # landed | aborted | timeout
    seed: int
    frames_total: int
    frames_to_commit: int | None = None
    commit_belief: float | None = None
    commit_center: tuple[float, float] | None = None
    commit_rho: float | None = None
    touchdown_error: float | None = None  # m, only when landed
    infeasible_belief_at_commit: float | None = None
    peak_infeasible_belief: float = 0.0
    telemetry: list[dict] = field(default_factory=list)
    track_rows: list[dict] = field(default_factory=list)


def command_to_world(cmd: srv.VelocityCommand, camera: CameraModel) -> np.ndarray:
    """Camera-axis lateral command + up-positive vertical -> world velocity."""
    lateral = camera.rotation_cw @ np.array([cmd.vx, cmd.vy, 0.0])
    return lateral + np.array([0.0, 0.0, cmd.vz])


def step_vehicle_world(state: VehicleState, setpoint_world: np.ndarray,
                       dt: float, t_v: float) -> VehicleState:
    """First-order velocity response toward the setpoint, then integrate."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    gain = min(dt / t_v, 1.0)
    vel = state.velocity + gain * (np.asarray(setpoint_world, dtype=float) - state.velocity)
    pos = state.position + vel * dt
    return VehicleState(position=pos, velocity=vel, yaw=state.yaw)


def step_vehicle(state: VehicleState, cmd: srv.VelocityCommand, dt: float,
                 t_v: float, camera: CameraModel) -> VehicleState:
    return step_vehicle_world(state, command_to_world(cmd, camera), dt, t_v)


def lawnmower_waypoints(extent: tuple[float, float], altitude: float,
                        focal: float, width_px: int, margin: float = 1.0,
                        overlap: float = 0.5) -> list[tuple[float, float]]:
    """Serpentine scan rows covering the extent at the given view overlap."""
    lx, ly = extent
    swath = max((width_px / focal) * altitude * (1.0 - overlap), 0.5)
    x0, x1 = min(margin, lx / 2), max(lx - margin, lx / 2)
    y = min(margin, ly / 2)
    y_end = max(ly - margin, ly / 2)
    pts: list[tuple[float, float]] = []
    left = True
    while True:
        pts.append((x0 if left else x1, y))
        pts.append((x1 if left else x0, y))
        if y >= y_end:
            break
        y = min(y + swath, y_end)
        left = not left
    return pts


class _ScanGuidance:
    """Waypoint follower producing world-frame velocity setpoints."""

    def __init__(self, waypoints: list[tuple[float, float]], speed: float,
                 reach: float = 0.2):
        self.waypoints = waypoints
        self.speed = speed
        self.reach = reach
        self.index = 0

    def setpoint(self, position: np.ndarray) -> np.ndarray:
        if not self.waypoints:
            return np.zeros(3)
        target = np.asarray(self.waypoints[self.index])
        delta = target - position[:2]
        dist = float(np.hypot(delta[0], delta[1]))
        while dist < self.reach:
            self.index = (self.index + 1) % len(self.waypoints)
            target = np.asarray(self.waypoints[self.index])
            delta = target - position[:2]
            new_dist = float(np.hypot(delta[0], delta[1]))
            if new_dist <= dist:  # all waypoints within reach: hover
                return np.zeros(3)
            dist = new_dist
        v = self.speed * delta / dist
        return np.array([v[0], v[1], 0.0])


def make_camera(scenario: Scenario, position: np.ndarray, yaw: float = 0.0) -> CameraModel:
    return nadir_camera(position, yaw, width=scenario.camera_width,
                        height=scenario.camera_height,
                        focal_length=scenario.camera_focal)


def _fmt(value: float | int | str | None) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def run_episode(scenario: Scenario, params: Params, seed: int,
                observer: Observer | None = None) -> EpisodeResult:
    validate(params)
    world = build_world(scenario)
    rng = np.random.default_rng(seed)
    dt = 1.0 / params.f_s

    start_xy = scenario.start if scenario.start is not None else (
        scenario.extent[0] / 2.0, scenario.extent[1] / 2.0)
    state = VehicleState(
        position=np.array([start_xy[0], start_xy[1], scenario.altitude]),
        velocity=np.zeros(3), yaw=0.0)

    guidance = _ScanGuidance(
        lawnmower_waypoints(scenario.extent, scenario.altitude,
                            scenario.camera_focal, scenario.camera_width),
        speed=params.v_xy_max)

    model = bel.LikelihoodModel.from_params(params)
    persistence = bel.PersistenceModel(alpha=params.alpha)
    tracks: list[bel.RegionTrack] = []
    next_id = 0

    result = EpisodeResult(outcome="timeout", seed=seed, frames_total=0)
    decision: sel.LandingDecision | None = None
    commit_mask: per.RegionMask | None = None
    commit_center_px: tuple[int, int] | None = None

    # ---------------- scan phase ----------------
    t = 0
    for t in range(params.f_max):
        camera = make_camera(scenario, state.position, state.yaw)
        frame = dataclasses.replace(render_true_depth(world, camera), t=t)
        frame = corrupt(frame, scenario.noise, rng)

        screen = per.screen_frame(frame, params)
        regions = per.extract_regions(frame, params, screen=screen)
        assoc = bel.associate(tracks, regions, frame_index=t, b0=params.b0,
                              next_id=next_id, iou_min=params.iou_min,
                              grace=params.track_grace)
        tracks, next_id = assoc.tracks, assoc.next_id

        gravity = per.gravity_in_camera(camera)
        matched_cues: dict[int, per.CueVector] = {}
        for track, region in assoc.matches:
            fit = per.fit_plane(frame, region)
            if fit is None:
                continue
            matched_cues[track.id] = per.compute_cues(
                frame, region, fit, gravity, screen.obstacle_mask, params)
        bel.step(tracks, matched_cues, model, persistence, t)

        feasibility: dict[int, sel.FeasibilityResult] = {}
        centers_px: dict[int, tuple[int, int]] = {}
        centers_ground: dict[int, tuple[float, float]] = {}
        for track in tracks:
            gsd = track.mask.mean_depth / track.mask.camera.focal_length
            feas, center_px = sel.inscribed_radius(track.mask.pixels, gsd, params.rho_min)
            feasibility[track.id] = feas
            if center_px is not None:
                centers_px[track.id] = center_px
                center_w = track.mask.camera.backproject(
                    center_px[0], center_px[1], track.mask.mean_depth)
                centers_ground[track.id] = (float(center_w[0]), float(center_w[1]))

        infeasible_beliefs = [tr.belief for tr in tracks
                              if not feasibility[tr.id].feasible]
        if infeasible_beliefs:
            result.peak_infeasible_belief = max(result.peak_infeasible_belief,
                                                max(infeasible_beliefs))

        decision = sel.select(tracks, feasibility, centers_ground,
                              params.tau, t)

        _record_tracks(result, t, tracks, matched_cues)
        setpoint = guidance.setpoint(state.position)
        _record_frame(result, t, "scan", state, setpoint_cmd=setpoint,
                      n_regions=len(regions), tracks=tracks,
                      feasibility=feasibility)
        if observer is not None:
            observer("scan_frame", {
                "t": t, "frame": frame, "regions": regions, "tracks": tracks,
                "screen": screen, "matched_cues": matched_cues,
                "feasibility": feasibility,
            })

        if decision is not None:
            result.frames_to_commit = t
            result.commit_belief = decision.belief_at_commit
            result.commit_center = decision.center_ground
            result.commit_rho = decision.rho
            result.infeasible_belief_at_commit = (
                max(infeasible_beliefs) if infeasible_beliefs else None)
            committed = next(tr for tr in tracks if tr.id == decision.track_id)
            commit_mask = committed.mask
            commit_center_px = centers_px[decision.track_id]
            if observer is not None:
                observer("commit", {"t": t, "decision": decision,
                                    "frame": frame, "mask": commit_mask})
            break

        state = step_vehicle_world(state, setpoint, dt, params.t_v)

    result.frames_total = t + 1
    if decision is None or commit_mask is None or commit_center_px is None:
        result.outcome = "timeout"
        return result

    # ---------------- execution phase ----------------
    outcome, err, frames = _run_execution(
        scenario, params, world, rng, state, decision, commit_mask,
        commit_center_px, result, observer, start_t=result.frames_total)
    result.outcome = outcome
    result.touchdown_error = err
    result.frames_total += frames
    return result


def _run_execution(scenario: Scenario, params: Params, world: World,
                   rng: np.random.Generator, state: VehicleState,
                   decision: sel.LandingDecision, commit_mask: per.RegionMask,
                   commit_center_px: tuple[int, int], result: EpisodeResult,
                   observer: Observer | None,
                   start_t: int) -> tuple[str, float | None, int]:
    dt = 1.0 / params.f_s
    commit_cam = commit_mask.camera
    c_world = np.asarray(decision.center_ground, dtype=float)

    # detect the feature cloud around the committed center; the anchor point
    # tracks the center's image position through the cloud's common motion
    first_cam = make_camera(scenario, state.position, state.yaw)
    frame = dataclasses.replace(render_true_depth(world, first_cam), t=start_t)
    frame = corrupt(frame, scenario.noise, rng)
    c_px = _project_px(first_cam, np.array([c_world[0], c_world[1],
                                            _center_height(commit_cam, commit_center_px,
                                                           commit_mask)]))
    features, _, z0 = _init_features(frame, c_px, commit_mask, params)
    if features is None:
        return "aborted", None, 1
    features.anchor_px = np.asarray(c_px, dtype=float)

    fs = features
    z_t = z0
    lost = 0
    for k in range(params.f_max_exec):
        t = start_t + k
        if k > 0:
            camera = make_camera(scenario, state.position, state.yaw)
            frame = dataclasses.replace(render_true_depth(world, camera), t=t)
            frame = corrupt(frame, scenario.noise, rng)
        camera = frame.camera

        sel_pixels = commit_mask.pixels & frame.valid
        if sel_pixels.any():
            z_t = float(frame.depth[sel_pixels].mean())

        if k > 0:
            fs = srv.detect_and_track(frame.intensity, frame.valid, fs, params,
                                      z_now=z_t)

        if fs.n_t == 0:
            lost += 1
            cmd = srv.HOVER
            s_virtual = None
        else:
            lost = 0
            s_virtual = srv.anchor_normalized(fs, camera)
            servo_state = srv.ServoState(
                centroid=(float(s_virtual[0]), float(s_virtual[1])), z=z_t,
                gain=params.lam, v_xy_max=params.v_xy_max,
                v_z_max=params.v_z_max, e_align=params.e_align,
                v_des=params.v_des)
            cmd = srv.control(servo_state)

        _record_frame(result, t, "exec", state, servo_cmd=cmd, fs=fs,
                      s_virtual=s_virtual, depth_z=z_t)
        if observer is not None:
            observer("exec_frame", {"t": t, "frame": frame, "features": fs,
                                    "cmd": cmd, "s": s_virtual, "z": z_t})

        if lost > params.track_grace:
            return "aborted", None, k + 1

        state_next = step_vehicle(state, cmd, dt, params.t_v, camera)
        terrain = float(world.height_at(state_next.position[0], state_next.position[1]))
        if state_next.position[2] - terrain < params.h_td:
            err = float(np.hypot(state_next.position[0] - c_world[0],
                                 state_next.position[1] - c_world[1]))
            return "landed", err, k + 1
        state = state_next
    return "timeout", None, params.f_max_exec


def _center_height(camera: CameraModel, center_px: tuple[int, int],
                   mask: per.RegionMask) -> float:
    point = camera.backproject(center_px[0], center_px[1], mask.mean_depth)
    return float(point[2])


def _project_px(camera: CameraModel, point_world: np.ndarray) -> np.ndarray:
    p_cam = camera.rotation_wc @ (np.asarray(point_world, dtype=float) - camera.position)
    cx, cy = camera.principal_point
    if p_cam[2] <= 0.0:
        return np.array([cx, cy])
    return np.array([camera.focal_length * p_cam[0] / p_cam[2] + cx,
                     camera.focal_length * p_cam[1] / p_cam[2] + cy])


def _init_features(frame: DepthFrame, c_px: np.ndarray, commit_mask: per.RegionMask,
                   params: Params):
    """Detect the initial feature cloud near the committed center.

    Returns (FeatureSet, feature-centroid world point, initial depth) or
    (None, None, None) when no salient points exist even in a widened
    window.
    """
    h, w = frame.intensity.shape
    vs = np.arange(h)[:, None]
    us = np.arange(w)[None, :]
    for radius in (params.commit_window_px, 3 * params.commit_window_px):
        disk = (us - c_px[0]) ** 2 + (vs - c_px[1]) ** 2 <= radius ** 2
        allowed = disk & frame.valid & commit_mask.pixels
        if not allowed.any():
            allowed = disk & frame.valid
        sel_valid = allowed & frame.valid
        z0 = float(frame.depth[sel_valid].mean()) if sel_valid.any() \
            else commit_mask.mean_depth
        fs = srv.detect_and_track(frame.intensity, allowed, None, params, z_now=z0)
        if fs.n_t > 0:
            mean_px = fs.points.mean(axis=0)
            p_world = frame.camera.backproject(mean_px[0], mean_px[1], z0)
            return fs, p_world, z0
    return None, None, None


def _record_tracks(result: EpisodeResult, t: int, tracks: list[bel.RegionTrack],
                   matched_cues: dict[int, per.CueVector]) -> None:
    for track in tracks:
        cues = matched_cues.get(track.id)
        hist = track.history[-1] if track.history else (t, math.nan, math.nan, track.belief)
        row = {
            "t": t, "id": track.id,
            "f": cues.flatness if cues else None,
            "s": cues.slope if cues else None,
            "o": cues.obstacle if cues else None,
            "l1": None if math.isnan(hist[1]) else hist[1],
            "l0": None if math.isnan(hist[2]) else hist[2],
            "b": track.belief,
        }
        result.track_rows.append(row)


def _record_frame(result: EpisodeResult, t: int, phase: str, state: VehicleState,
                  setpoint_cmd: np.ndarray | None = None,
                  servo_cmd: srv.VelocityCommand | None = None,
                  n_regions: int = 0, tracks: list[bel.RegionTrack] | None = None,
                  feasibility: dict[int, sel.FeasibilityResult] | None = None,
                  fs: srv.FeatureSet | None = None,
                  s_virtual: np.ndarray | None = None,
                  depth_z: float | None = None) -> None:
    best_belief = max((tr.belief for tr in tracks), default=None) if tracks else None
    best_feasible = None
    if tracks and feasibility:
        feas_beliefs = [tr.belief for tr in tracks if feasibility[tr.id].feasible]
        best_feasible = max(feas_beliefs, default=None)
    if servo_cmd is not None:
        cmd_vals = (servo_cmd.vx, servo_cmd.vy, servo_cmd.vz)
    elif setpoint_cmd is not None:
        cmd_vals = tuple(float(v) for v in setpoint_cmd)
    else:
        cmd_vals = (None, None, None)
    e_norm = float(np.hypot(s_virtual[0], s_virtual[1])) if s_virtual is not None else None
    result.telemetry.append({
        "t": t, "phase": phase,
        "x": float(state.position[0]), "y": float(state.position[1]),
        "z": float(state.position[2]),
        "vx": float(state.velocity[0]), "vy": float(state.velocity[1]),
        "vz": float(state.velocity[2]),
        "cmd_vx": cmd_vals[0], "cmd_vy": cmd_vals[1], "cmd_vz": cmd_vals[2],
        "n_regions": n_regions, "n_tracks": len(tracks) if tracks else 0,
        "best_belief": best_belief, "best_feasible_belief": best_feasible,
        "n_features": fs.n_t if fs is not None else None,
        "s_u": None if s_virtual is None else float(s_virtual[0]),
        "s_v": None if s_virtual is None else float(s_virtual[1]),
        "e_norm": e_norm, "depth_z": depth_z,
    })


def format_row(row: dict, fields: tuple[str, ...]) -> list[str]:
    return [_fmt(row.get(name)) for name in fields]
