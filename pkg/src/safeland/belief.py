"""Two-hypothesis likelihoods, track association, and the belief recursion.

Each persistent region track carries a probability that its latent
safe-to-land state is true. Per frame the belief is first mixed toward
0.5 by the Markov persistence prior, then updated by the ratio of the
safe/unsafe cue likelihoods. Likelihoods are floored so no track ever
saturates; evidence always stays revisable.

Association runs on ground-projected footprints (greedy best-IoU), so
camera motion does not break track identity.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import math

import numpy as np

from .params import Params
from .perception import CueVector, RegionMask


@dataclass(frozen=True)
class LikelihoodModel:
    """Bounded monotone cue-to-likelihood mappings with weights and a floor."""

    sigma_f: float = 1.0    # scale on the (already normalized) flatness cue
    sigma_s: float = 0.15   # rad
    sigma_o: float = 0.5
    w_f: float = 0.4
    w_s: float = 0.2
    w_o: float = 0.4
    eps_l: float = 0.05

    def __post_init__(self) -> None:
        if min(self.w_f, self.w_s, self.w_o) < 0.0:
            raise ValueError("weights must be non-negative")
        if not 0.0 < self.eps_l <= 0.5:
            raise ValueError("likelihood floor must be in (0, 0.5]")

    @classmethod
    def from_params(cls, params: Params) -> "LikelihoodModel":
        return cls(sigma_f=params.sigma_f_cue, sigma_s=params.sigma_s,
                   sigma_o=params.sigma_o, w_f=params.w_f, w_s=params.w_s,
                   w_o=params.w_o, eps_l=params.eps_l)

    def _l(self, x: float, sigma: float) -> float:
        return max(math.exp(-x / sigma), self.eps_l)

    def l_f(self, flatness: float) -> float:
        return self._l(flatness, self.sigma_f)

    def l_s(self, slope: float) -> float:
        return self._l(slope, self.sigma_s)

    def l_o(self, obstacle: float) -> float:
        return self._l(obstacle, self.sigma_o)


@dataclass(frozen=True)
class PersistenceModel:
    alpha: float = 0.95

    def __post_init__(self) -> None:
        if not 0.5 < self.alpha < 1.0:
            raise ValueError("persistence alpha must be in (0.5, 1)")


def likelihood_safe(cues: CueVector, model: LikelihoodModel) -> float:
    """Weighted product of the per-cue likelihoods, clamped to [eps_l, 1]."""
    value = (model.l_f(cues.flatness) ** model.w_f
             * model.l_s(cues.slope) ** model.w_s
             * model.l_o(cues.obstacle) ** model.w_o)
    return min(max(value, model.eps_l), 1.0)


def likelihood_unsafe(cues: CueVector, model: LikelihoodModel) -> float:
    """Complement-product counterpart, same floor; increases as cues worsen."""
    value = ((1.0 - model.l_f(cues.flatness)) ** model.w_f
             * (1.0 - model.l_s(cues.slope)) ** model.w_s
             * (1.0 - model.l_o(cues.obstacle)) ** model.w_o)
    return min(max(value, model.eps_l), 1.0)


def predict(b_prev: float, alpha: float) -> float:
    """Markov persistence prior: mixes the belief toward 0.5."""
    return alpha * b_prev + (1.0 - alpha) * (1.0 - b_prev)


def update(b_bar: float, l1: float, l0: float) -> float:
    """Bayes update of the predicted belief with the two-hypothesis likelihoods."""
    num = l1 * b_bar
    return num / (num + l0 * (1.0 - b_bar))


@dataclass
class RegionTrack:
    id: int
    mask: RegionMask
    belief: float
    last_seen: int
    cues: CueVector | None = None
    misses: int = 0
    history: deque = field(default_factory=lambda: deque(maxlen=512))


def footprint_iou(cells_a: np.ndarray, cells_b: np.ndarray) -> float:
    """IoU of two ground footprints given as (K, 2) integer cell arrays."""
    if len(cells_a) == 0 or len(cells_b) == 0:
        return 0.0
    enc_a = cells_a[:, 0].astype(np.int64) * (2**32) + cells_a[:, 1].astype(np.int64)
    enc_b = cells_b[:, 0].astype(np.int64) * (2**32) + cells_b[:, 1].astype(np.int64)
    inter = np.intersect1d(enc_a, enc_b, assume_unique=True).size
    union = enc_a.size + enc_b.size - inter
    return inter / union if union else 0.0


@dataclass
class AssociationResult:
    tracks: list[RegionTrack]                       # surviving + newly spawned
    matches: list[tuple[RegionTrack, RegionMask]]   # matched pairs this frame
    next_id: int


def associate(tracks: list[RegionTrack], regions: list[RegionMask], *,
              frame_index: int, b0: float, next_id: int,
              iou_min: float = 0.3, grace: int = 5) -> AssociationResult:
    """Greedy best-IoU matching of current regions onto existing tracks.

    Unmatched regions spawn fresh tracks at the initial belief; tracks
    unmatched for more than ``grace`` consecutive frames retire.
    """
    n_t, n_r = len(tracks), len(regions)
    iou = np.zeros((n_t, n_r))
    for i, track in enumerate(tracks):
        for j, region in enumerate(regions):
            iou[i, j] = footprint_iou(track.mask.ground_footprint,
                                      region.ground_footprint)

    matches: list[tuple[RegionTrack, RegionMask]] = []
    used_t = np.zeros(n_t, dtype=bool)
    used_r = np.zeros(n_r, dtype=bool)
    while n_t and n_r:
        masked = np.where(used_t[:, None] | used_r[None, :], -1.0, iou)
        i, j = np.unravel_index(int(np.argmax(masked)), masked.shape)
        if masked[i, j] < iou_min:
            break
        used_t[i] = used_r[j] = True
        track, region = tracks[i], regions[j]
        track.mask = region
        track.last_seen = frame_index
        track.misses = 0
        matches.append((track, region))

    survivors: list[RegionTrack] = []
    for i, track in enumerate(tracks):
        if not used_t[i]:
            track.misses += 1
            if track.misses > grace:
                continue
        survivors.append(track)

    for j, region in enumerate(regions):
        if used_r[j]:
            continue
        fresh = RegionTrack(id=next_id, mask=region, belief=b0,
                            last_seen=frame_index)
        next_id += 1
        survivors.append(fresh)
        matches.append((fresh, region))

    return AssociationResult(tracks=survivors, matches=matches, next_id=next_id)


def step(tracks: list[RegionTrack], matched_cues: dict[int, CueVector],
         model: LikelihoodModel, persistence: PersistenceModel,
         frame_index: int) -> None:
    """One belief tick: predict every track, update the matched ones."""
    for track in tracks:
        b_bar = predict(track.belief, persistence.alpha)
        cues = matched_cues.get(track.id)
        if cues is None:
            track.belief = b_bar
            track.history.append((frame_index, math.nan, math.nan, b_bar))
            continue
        l1 = likelihood_safe(cues, model)
        l0 = likelihood_unsafe(cues, model)
        track.belief = update(b_bar, l1, l0)
        track.cues = cues
        track.history.append((frame_index, l1, l0, track.belief))
