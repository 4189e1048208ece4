"""Candidate landing regions and per-region geometric cues from one depth frame.

Screening marks a pixel as locally landable when the windowed standard
deviation of reconstructed world height and the depth gradient magnitude
both stay under their thresholds. Passing pixels form 4-connected
components; invalid (dropout) pixels are tolerated inside a component so
holes do not shatter or shrink a region, but a region that is mostly
invalid is dropped. Valid pixels that fail screening form the obstacle
map consumed by the proximity cue.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .params import Params
from .scene import CameraModel, DepthFrame
from .selector import distance_sq_to

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=int)


@dataclass(frozen=True)
class ScreenResult:
    pass_mask: np.ndarray      # valid pixels that satisfy the screening criteria
    obstacle_mask: np.ndarray  # valid pixels that violate them
    world_height: np.ndarray   # reconstructed terrain height per pixel (m)


@dataclass(frozen=True)
class RegionMask:
    pixels: np.ndarray             # (H, W) bool, 4-connected component
    area_px: int
    centroid_px: tuple[float, float]   # (u, v)
    ground_footprint: np.ndarray   # (K, 2) int64 occupied ground cells
    footprint_res: float           # m per footprint cell
    mean_depth: float              # m, over valid pixels in the region
    valid_fraction: float
    camera: CameraModel            # camera the mask was observed with


@dataclass(frozen=True)
class PlaneFit:
    normal: np.ndarray     # unit 3-vector, camera frame, oriented toward the camera
    offset: float          # m, distance of the plane from the camera center
    rms_residual: float    # m, RMS orthogonal distance
    inlier_count: int


@dataclass(frozen=True)
class CueVector:
    flatness: float   # normalized plane-fit residual, >= 0
    slope: float      # rad, angle between plane normal and gravity vertical
    obstacle: float   # proximity score in [0, 1]

    def __post_init__(self) -> None:
        if not (np.isfinite(self.flatness) and np.isfinite(self.slope)
                and np.isfinite(self.obstacle)):
            raise ValueError("cue values must be finite")
        if self.flatness < 0.0 or not -1e-9 <= self.slope <= np.pi / 2 + 1e-9 \
                or not -1e-9 <= self.obstacle <= 1.0 + 1e-9:
            raise ValueError(f"cue out of range: {self}")


def _pixel_world_points(frame: DepthFrame) -> np.ndarray:
    """(H, W, 3) world point per pixel (meaningless where invalid)."""
    dirs = frame.camera.pixel_dirs_world()
    return frame.camera.position + dirs * frame.depth[..., None]


def screen_frame(frame: DepthFrame, params: Params) -> ScreenResult:
    valid = frame.valid
    k = params.screen_k
    world_z = _pixel_world_points(frame)[..., 2]
    hz = np.where(valid, world_z, 0.0)
    vf = valid.astype(float)

    def winsum(a: np.ndarray) -> np.ndarray:
        return ndimage.uniform_filter(a, size=k, mode="constant", cval=0.0) * (k * k)

    count = winsum(vf)
    min_count = max(3.0, (k * k) / 3.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = winsum(hz) / count
        var = winsum(hz * hz) / count - mean * mean
    std = np.sqrt(np.clip(var, 0.0, None))
    pass_var = valid & (count >= min_count) & (std <= params.v_max)

    # central differences where both neighbors are valid, one-sided otherwise
    d = frame.depth
    gx = _masked_gradient(d, valid, axis=1)
    gy = _masked_gradient(d, valid, axis=0)
    grad_ok = np.isfinite(gx) & np.isfinite(gy)
    mag = np.where(grad_ok, np.hypot(np.where(grad_ok, gx, 0.0), np.where(grad_ok, gy, 0.0)), np.inf)
    pass_grad = valid & grad_ok & (mag <= params.g_max)

    pass_mask = pass_var & pass_grad
    obstacle_mask = valid & ~pass_mask
    return ScreenResult(pass_mask=pass_mask, obstacle_mask=obstacle_mask, world_height=world_z)


def _masked_gradient(d: np.ndarray, valid: np.ndarray, axis: int) -> np.ndarray:
    prev_v = np.roll(valid, 1, axis=axis)
    next_v = np.roll(valid, -1, axis=axis)
    prev_d = np.roll(d, 1, axis=axis)
    next_d = np.roll(d, -1, axis=axis)
    # roll wraps around; kill the wrapped border samples
    if axis == 0:
        prev_v = prev_v.copy(); prev_v[0, :] = False
        next_v = next_v.copy(); next_v[-1, :] = False
    else:
        prev_v = prev_v.copy(); prev_v[:, 0] = False
        next_v = next_v.copy(); next_v[:, -1] = False
    central = (next_d - prev_d) * 0.5
    fwd = next_d - d
    bwd = d - prev_d
    out = np.where(prev_v & next_v, central,
                   np.where(next_v, fwd, np.where(prev_v, bwd, np.nan)))
    return np.where(valid, out, np.nan)


def extract_regions(frame: DepthFrame, params: Params,
                    screen: ScreenResult | None = None) -> list[RegionMask]:
    """Screened 4-connected components with area >= a_min, largest first."""
    if screen is None:
        screen = screen_frame(frame, params)
    candidate = screen.pass_mask | ~frame.valid
    labels, n_labels = ndimage.label(candidate, structure=_FOUR_CONNECTED)
    if n_labels == 0:
        return []

    regions: list[RegionMask] = []
    world = _pixel_world_points(frame)
    for lab in range(1, n_labels + 1):
        comp = labels == lab
        area = int(comp.sum())
        if area < params.a_min:
            continue
        comp_valid = comp & frame.valid
        n_valid = int(comp_valid.sum())
        if area == 0 or n_valid == 0:
            continue
        if 1.0 - n_valid / area > params.max_invalid_frac:
            continue
        vs, us = np.nonzero(comp)
        centroid = (float(us.mean()), float(vs.mean()))
        pts = world[comp_valid]
        cells = np.unique(
            np.floor(pts[:, :2] / params.assoc_res).astype(np.int64), axis=0)
        regions.append(RegionMask(
            pixels=comp,
            area_px=area,
            centroid_px=centroid,
            ground_footprint=cells,
            footprint_res=params.assoc_res,
            mean_depth=float(frame.depth[comp_valid].mean()),
            valid_fraction=n_valid / area,
            camera=frame.camera,
        ))
    regions.sort(key=lambda r: -r.area_px)
    return regions


def tls_plane(points: np.ndarray) -> PlaneFit | None:
    """Total-least-squares plane through a point set (camera frame).

    Returns None when the points are too few or collinear. Order- and
    duplication-invariant: the fit depends only on the point distribution.
    """
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if n < 3:
        return None
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / n
    evals, evecs = np.linalg.eigh(cov)         # ascending eigenvalues
    if evals[1] <= 1e-12 * max(evals[2], 1.0) + 1e-14:
        return None                            # collinear point set
    normal = evecs[:, 0]
    if normal @ centroid > 0.0:
        normal = -normal                       # orient toward the camera
    rms = float(np.sqrt(max(evals[0], 0.0)))
    offset = float(-normal @ centroid)
    return PlaneFit(normal=normal, offset=offset, rms_residual=rms, inlier_count=n)


def fit_plane(frame: DepthFrame, mask: RegionMask | np.ndarray) -> PlaneFit | None:
    """Total-least-squares plane over the region's back-projected 3-D points.

    Returns None when the points are too few or collinear; the caller
    skips the region for this frame.
    """
    pix = mask.pixels if isinstance(mask, RegionMask) else np.asarray(mask, dtype=bool)
    sel = pix & frame.valid
    if int(sel.sum()) < 3:
        return None
    dirs = frame.camera.pixel_dirs_camera()[sel]
    pts = dirs * frame.depth[sel][:, None]     # camera-frame points
    return tls_plane(pts)


def gravity_in_camera(camera: CameraModel) -> np.ndarray:
    """Unit gravity direction (world -z) expressed in the camera frame."""
    return camera.rotation_wc @ np.array([0.0, 0.0, -1.0])


def compute_cues(frame: DepthFrame, mask: RegionMask, fit: PlaneFit,
                 gravity_cam: np.ndarray, obstacle_mask: np.ndarray,
                 params: Params) -> CueVector:
    """Flatness, slope, obstacle-proximity cue vector for one region."""
    g = np.asarray(gravity_cam, dtype=float)
    if not np.isclose(np.linalg.norm(g), 1.0, atol=1e-6):
        raise ValueError("gravity direction must be unit length")
    flat = fit.rms_residual / params.sigma_f
    slope = float(np.arccos(np.clip(abs(float(fit.normal @ g)), 0.0, 1.0)))

    if not obstacle_mask.any():
        prox = 0.0
    else:
        dist_px = np.sqrt(distance_sq_to(obstacle_mask).astype(float))
        vs, us = np.nonzero(mask.pixels)
        cu, cv = mask.centroid_px
        d2c = (us - cu) ** 2 + (vs - cv) ** 2
        order = np.lexsort((us, vs, d2c))
        k = min(params.obstacle_k, order.size)
        sel = order[:k]
        gsd = mask.mean_depth / frame.camera.focal_length
        d_obs = float(dist_px[vs[sel], us[sel]].mean()) * gsd
        prox = float(np.exp(-d_obs / params.d_scale))
    return CueVector(flatness=flat, slope=slope, obstacle=prox)


def region_label_map(regions: list[RegionMask], shape: tuple[int, int]) -> np.ndarray:
    """Label raster for debug export: region index + 1, background 0."""
    out = np.zeros(shape, dtype=np.int32)
    for idx, region in enumerate(regions, start=1):
        out[region.pixels] = idx
    return out
