"""Salient-point tracking and the terminal visual-servo control law.

The tracker is deliberately simple: corner candidates are local maxima
of windowed intensity variance, matched by minimum patch SSD inside a
bounded search window (the template is pre-warped by the known relative
depth change, and a gradient-based sub-pixel refinement follows when the
best match is not exact). Templates refresh only after a meaningful
depth change, so a static camera over a static scene tracks with exactly
zero drift.

The feature set also carries an anchor: the image position of a chosen
scene point (the detection centroid by default; the landing loop re-seats
it on the committed center), propagated by the common scale-and-shift
motion of the surviving points. Servoing on the anchor keeps the error
signal continuous when individual points drop out or new ones are
detected.

The control law maps the normalized image error through the pseudoinverse
of the point interaction matrix. The emitted command's lateral components
live in camera axes (image right / image down); the vertical component
is up-positive, so descent is a negative ``vz``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .params import Params
from .scene import CameraModel

_MIN_CORNER_SCORE = 1e-5  # variance threshold; constant patches score zero


@dataclass
class FeatureSet:
    points: np.ndarray      # (N, 2) float64 pixel positions (u, v)
    patches: np.ndarray     # (N, P, P) templates sampled at detection/refresh
    anchor_px: np.ndarray   # (2,) propagated initial-centroid position
    ref_z: float            # depth at which the templates were sampled

    @property
    def n_t(self) -> int:
        return int(self.points.shape[0])


def _variance_score(intensity: np.ndarray, win: int = 5) -> np.ndarray:
    mean = ndimage.uniform_filter(intensity, size=win, mode="nearest")
    mean_sq = ndimage.uniform_filter(intensity * intensity, size=win, mode="nearest")
    return np.clip(mean_sq - mean * mean, 0.0, None)


def detect_features(intensity: np.ndarray, allowed: np.ndarray, *,
                    n_max: int, patch_radius: int, nms_radius: int = 3,
                    margin: int | None = None) -> np.ndarray:
    """Top corner candidates as an (N, 2) integer (u, v) array."""
    h, w = intensity.shape
    score = _variance_score(intensity)
    edge = patch_radius if margin is None else margin
    ok = allowed.copy()
    ok[:edge, :] = False
    ok[-edge:, :] = False
    ok[:, :edge] = False
    ok[:, -edge:] = False
    local_max = ndimage.maximum_filter(score, size=2 * nms_radius + 1,
                                       mode="nearest") == score
    cand = ok & local_max & (score > _MIN_CORNER_SCORE)
    vs, us = np.nonzero(cand)
    if vs.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    order = np.lexsort((us, vs, -score[vs, us]))[:n_max]
    return np.stack([us[order], vs[order]], axis=1).astype(np.int64)


def _sample_patches(intensity: np.ndarray, points: np.ndarray,
                    patch_radius: int) -> np.ndarray:
    pr = patch_radius
    out = np.empty((points.shape[0], 2 * pr + 1, 2 * pr + 1))
    for i, (u, v) in enumerate(points):
        ui, vi = int(round(u)), int(round(v))
        out[i] = intensity[vi - pr: vi + pr + 1, ui - pr: ui + pr + 1]
    return out


def _warp_template(template: np.ndarray, scale: float) -> np.ndarray:
    """Template as it would appear after the scene magnified by ``scale``.

    Exact identity at scale 1 so a static scene still matches bit-exactly.
    """
    if scale == 1.0:
        return template
    p = template.shape[0]
    c = (p - 1) / 2.0
    coords = np.clip((np.arange(p) - c) / scale + c, 0.0, p - 1.0)
    i0 = np.minimum(coords.astype(np.int64), p - 2)
    f = coords - i0
    rows = template[i0, :] * (1.0 - f)[:, None] + template[i0 + 1, :] * f[:, None]
    return rows[:, i0] * (1.0 - f)[None, :] + rows[:, i0 + 1] * f[None, :]


def _sample_patch_bilinear(intensity: np.ndarray, u: float, v: float,
                           patch_radius: int) -> np.ndarray | None:
    h, w = intensity.shape
    pr = patch_radius
    if not (pr + 1 <= u <= w - 2 - pr and pr + 1 <= v <= h - 2 - pr):
        return None
    us = u + np.arange(-pr, pr + 1)
    vs = v + np.arange(-pr, pr + 1)
    i0 = np.floor(us).astype(np.int64)
    j0 = np.floor(vs).astype(np.int64)
    fu = (us - i0)[None, :]
    fv = (vs - j0)[:, None]
    g = intensity
    return (g[np.ix_(j0, i0)] * (1 - fu) * (1 - fv)
            + g[np.ix_(j0, i0 + 1)] * fu * (1 - fv)
            + g[np.ix_(j0 + 1, i0)] * (1 - fu) * fv
            + g[np.ix_(j0 + 1, i0 + 1)] * fu * fv)


def _subpixel_refine(intensity: np.ndarray, template: np.ndarray, u: float,
                     v: float, patch_radius: int, iters: int = 3) -> tuple[float, float]:
    """Gradient-based sub-pixel alignment of the patch onto the template."""
    uu, vv = u, v
    for _ in range(iters):
        patch = _sample_patch_bilinear(intensity, uu, vv, patch_radius)
        if patch is None:
            break
        r = (patch - template)[1:-1, 1:-1].ravel()
        gu = 0.5 * (patch[1:-1, 2:] - patch[1:-1, :-2]).ravel()
        gv = 0.5 * (patch[2:, 1:-1] - patch[:-2, 1:-1]).ravel()
        h00 = float(gu @ gu) + 1e-12
        h11 = float(gv @ gv) + 1e-12
        h01 = float(gu @ gv)
        b0 = float(gu @ r)
        b1 = float(gv @ r)
        det = h00 * h11 - h01 * h01
        if det <= 1e-18:
            break
        du = -(h11 * b0 - h01 * b1) / det
        dv = -(h00 * b1 - h01 * b0) / det
        step = math.hypot(du, dv)
        if step > 1.0:
            du, dv = du / step, dv / step
        uu += du
        vv += dv
        if step < 1e-3:
            break
    if math.hypot(uu - u, vv - v) > 1.5:  # runaway refinement: keep the SSD answer
        return u, v
    return uu, vv


def _match_point(intensity: np.ndarray, template: np.ndarray, u: float, v: float,
                 search_radius: int, patch_radius: int,
                 mse_max: float) -> tuple[float, float] | None:
    h, w = intensity.shape
    pr, sr = patch_radius, search_radius
    ui, vi = int(round(u)), int(round(v))
    v0 = max(vi - sr, pr)
    v1 = min(vi + sr, h - 1 - pr)
    u0 = max(ui - sr, pr)
    u1 = min(ui + sr, w - 1 - pr)
    if v1 < v0 or u1 < u0:
        return None
    crop = intensity[v0 - pr: v1 + pr + 1, u0 - pr: u1 + pr + 1]
    windows = sliding_window_view(crop, (2 * pr + 1, 2 * pr + 1))
    ssd = ((windows - template) ** 2).sum(axis=(2, 3))
    j, i = np.unravel_index(int(np.argmin(ssd)), ssd.shape)
    best = float(ssd[j, i])
    n_px = (2 * pr + 1) ** 2
    if best / n_px > mse_max:
        return None
    mu, mv = float(u0 + i), float(v0 + j)
    # sub-pixel refinement; an exact integer match is kept as-is so a
    # static scene tracks with zero drift
    if best > 0.0:
        mu, mv = _subpixel_refine(intensity, template, mu, mv, pr)
    return mu, mv


def _fit_similarity(prev_pts: np.ndarray, new_pts: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    p_bar = prev_pts.mean(axis=0)
    q_bar = new_pts.mean(axis=0)
    dp = prev_pts - p_bar
    dq = new_pts - q_bar
    denom = float((dp * dp).sum())
    k = float((dp * dq).sum()) / denom if denom > 1e-12 else 1.0
    return k, p_bar, q_bar


def _similarity_step(prev_pts: np.ndarray, new_pts: np.ndarray,
                     anchor: np.ndarray) -> np.ndarray:
    """Propagate the anchor by the common scale-and-shift of the matched points.

    One trimming pass discards correspondences that disagree with the
    consensus motion (typically points degrading near the image border)
    before the final fit.
    """
    if prev_pts.shape[0] == 0:
        return anchor
    if prev_pts.shape[0] == 1:
        return anchor + (new_pts[0] - prev_pts[0])
    k, p_bar, q_bar = _fit_similarity(prev_pts, new_pts)
    if prev_pts.shape[0] >= 4:
        pred = k * (prev_pts - p_bar) + q_bar
        res = np.hypot(*(new_pts - pred).T)
        cut = max(0.5, 2.5 * float(np.median(res)))
        keep = res <= cut
        if keep.sum() >= 3 and keep.sum() < keep.size:
            k, p_bar, q_bar = _fit_similarity(prev_pts[keep], new_pts[keep])
    return k * (anchor - p_bar) + q_bar


def detect_and_track(intensity: np.ndarray, region_mask: np.ndarray,
                     previous: FeatureSet | None, params: Params, *,
                     z_now: float = math.nan,
                     redetect_center_px: np.ndarray | None = None) -> FeatureSet:
    """Initialize or advance the tracked feature set on a new intensity image.

    A returned set with ``n_t == 0`` is the tracking-lost signal. On
    initialization, detection is restricted to ``region_mask``; on later
    frames the mask bounds re-detection, which triggers whenever the
    population falls under ``n_min``.
    """
    pr = params.patch_radius
    margin = pr + 3
    if previous is None:
        pts = detect_features(intensity, region_mask, n_max=params.n_max,
                              patch_radius=pr, margin=margin)
        ptsf = pts.astype(float)
        anchor = ptsf.mean(axis=0) if len(ptsf) else np.zeros(2)
        return FeatureSet(points=ptsf, patches=_sample_patches(intensity, ptsf, pr),
                          anchor_px=anchor, ref_z=z_now)

    # known relative scale between template capture and now; warping the
    # template removes the matching bias a raw SSD would pick up
    scale = 1.0
    if math.isfinite(z_now) and math.isfinite(previous.ref_z) \
            and previous.ref_z > 0.0 and z_now > 0.0:
        scale = float(np.clip(previous.ref_z / z_now, 0.6, 1.8))

    h_img, w_img = intensity.shape
    border = float(margin)  # cull points before border clipping degrades their matches
    kept_prev: list[np.ndarray] = []
    kept_new: list[np.ndarray] = []
    kept_patch: list[np.ndarray] = []
    for i in range(previous.n_t):
        u, v = previous.points[i]
        hit = _match_point(intensity, _warp_template(previous.patches[i], scale),
                           u, v, params.search_radius, pr, params.mse_max)
        if hit is None:
            continue
        if not (border <= hit[0] <= w_img - 1 - border
                and border <= hit[1] <= h_img - 1 - border):
            continue
        kept_prev.append(previous.points[i])
        kept_new.append(np.array(hit))
        kept_patch.append(previous.patches[i])

    prev_pts = np.array(kept_prev) if kept_prev else np.zeros((0, 2))
    new_pts = np.array(kept_new) if kept_new else np.zeros((0, 2))
    anchor = _similarity_step(prev_pts, new_pts, previous.anchor_px)
    patches = np.array(kept_patch) if kept_patch else np.zeros((0, 2 * pr + 1, 2 * pr + 1))
    ref_z = previous.ref_z

    # refresh templates after a meaningful depth (scale) change; stored
    # positions snap to the new patch centers so no false motion enters
    # the anchor on the next frame
    if new_pts.shape[0] and math.isfinite(z_now) and math.isfinite(ref_z) \
            and ref_z > 0.0 and abs(z_now / ref_z - 1.0) > params.retemplate_ratio:
        inb = ((new_pts[:, 0] >= pr) & (new_pts[:, 0] <= intensity.shape[1] - 1 - pr)
               & (new_pts[:, 1] >= pr) & (new_pts[:, 1] <= intensity.shape[0] - 1 - pr))
        new_pts = np.round(new_pts[inb])
        patches = _sample_patches(intensity, new_pts, pr)
        ref_z = z_now

    if new_pts.shape[0] < params.n_min:
        center = redetect_center_px if redetect_center_px is not None else anchor
        h, w = intensity.shape
        vs = np.arange(h)[:, None]
        us = np.arange(w)[None, :]
        radius = max(2 * params.commit_window_px, 2 * params.search_radius)
        disk = (us - center[0]) ** 2 + (vs - center[1]) ** 2 <= radius ** 2
        allowed = disk & region_mask
        fresh = detect_features(intensity, allowed, n_max=params.n_max,
                                patch_radius=pr, margin=margin).astype(float)
        if fresh.shape[0]:
            if new_pts.shape[0]:
                d2 = ((fresh[:, None, :] - new_pts[None, :, :]) ** 2).sum(axis=2)
                fresh = fresh[d2.min(axis=1) > (2.0 * pr) ** 2]
            if fresh.shape[0]:
                fresh = fresh[: params.n_max - new_pts.shape[0]]
                # the whole set must share one template capture depth:
                # survivors are snapped and resampled alongside the new points
                if new_pts.shape[0]:
                    inb = ((new_pts[:, 0] >= pr) & (new_pts[:, 0] <= w - 1 - pr)
                           & (new_pts[:, 1] >= pr) & (new_pts[:, 1] <= h - 1 - pr))
                    new_pts = np.round(new_pts[inb])
                    new_pts = np.vstack([new_pts, fresh]) if new_pts.shape[0] else fresh
                else:
                    new_pts = fresh
                patches = _sample_patches(intensity, new_pts, pr)
                if math.isfinite(z_now):
                    ref_z = z_now

    return FeatureSet(points=new_pts, patches=patches, anchor_px=anchor, ref_z=ref_z)


# --------------------------------------------------------------------------
# centroid feature and control law
# --------------------------------------------------------------------------

def centroid(features: FeatureSet, camera: CameraModel) -> tuple[float, float]:
    """Mean feature position in normalized image coordinates."""
    if features.n_t == 0:
        raise ValueError("centroid of an empty feature set")
    mean_px = features.points.mean(axis=0)
    xn, yn = camera.normalized(mean_px[0], mean_px[1])
    return float(xn), float(yn)


def anchor_normalized(features: FeatureSet, camera: CameraModel) -> np.ndarray:
    xn, yn = camera.normalized(features.anchor_px[0], features.anchor_px[1])
    return np.array([float(xn), float(yn)])


def interaction_matrix(s, z: float) -> np.ndarray:
    """Point interaction matrix for normalized coordinates at depth z."""
    if not (np.isfinite(z) and z > 0.0):
        raise ValueError("depth must be positive and finite")
    u, v = float(s[0]), float(s[1])
    return np.array([[-1.0 / z, 0.0, u / z],
                     [0.0, -1.0 / z, v / z]])


def ibvs_velocity(s, z: float, error, gain: float) -> np.ndarray:
    """Raw control output -gain * pinv(L) @ e in optical-axis camera coordinates."""
    l_mat = interaction_matrix(s, z)
    return -gain * (np.linalg.pinv(l_mat) @ np.asarray(error, dtype=float))


@dataclass(frozen=True)
class VelocityCommand:
    vx: float  # m/s, camera x (image right)
    vy: float  # m/s, camera y (image down)
    vz: float  # m/s, up-positive; descent is negative

    @property
    def lateral_norm(self) -> float:
        return math.hypot(self.vx, self.vy)

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.vz])


HOVER = VelocityCommand(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ServoState:
    centroid: tuple[float, float]          # normalized image coordinates
    z: float                               # m, mean region depth
    gain: float
    v_xy_max: float
    v_z_max: float
    e_align: float
    v_des: float
    target: tuple[float, float] = (0.0, 0.0)

    @property
    def error(self) -> np.ndarray:
        return np.array([self.centroid[0] - self.target[0],
                         self.centroid[1] - self.target[1]])


def control(state: ServoState) -> VelocityCommand:
    """Saturated velocity command with gated descent; hovers on bad input."""
    e = state.error
    if not (np.all(np.isfinite(e)) and np.isfinite(state.z) and state.z > 0.0):
        return HOVER
    v_raw = ibvs_velocity(state.centroid, state.z, e, state.gain)
    if not np.all(np.isfinite(v_raw)):
        return HOVER
    vz = -float(v_raw[2])  # optical-axis forward -> up-positive
    if float(np.hypot(e[0], e[1])) < state.e_align:
        vz = -state.v_des
    vx, vy = float(v_raw[0]), float(v_raw[1])
    lat = math.hypot(vx, vy)
    if lat > state.v_xy_max:
        scale = state.v_xy_max / lat
        vx *= scale
        vy *= scale
    vz = float(np.clip(vz, -state.v_z_max, state.v_z_max))
    return VelocityCommand(vx=vx, vy=vy, vz=vz)
