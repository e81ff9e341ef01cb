"""Deterministic synthetic trial renderer used for desk-scale verification.

A trial shows two leg-shaped blobs (joined by a hip block so the silhouette is
one connected region) walking over a vertically striped background with a
ramped floor plane in the depth channel. Class semantics:

* stop: legs and background static.
* walk: legs step vertically in antiphase; the background translates downward,
  which leaves the vertical stripes pixel-identical, so between any two walk
  frames only leg pixels change and the body is the sole stop/walk cue.
* turn right/left: legs keep stepping, lean and shift toward the turn
  direction, and the stripes visibly shear sideways (deliberately not
  period-aligned), keeping the background-motion confound for turns.

Depth places legs nearer than the background, with the floor ramp linear in
row index over the bottom quarter of the image so the mask pipeline can
recover the legs exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigError
from .types import (
    CIRCUITS,
    GAIT_SPEEDS,
    ActionClass,
    FrameRGBD,
    LabelTrack,
    TrialRecording,
    turn_class_for_circuit,
)

# Recording-rate frames over which the walking background advances one full
# pattern period; equals the span of a 4-frame window at 15 Hz.
FLOW_PERIOD_FRAMES = 6


@dataclass(frozen=True)
class SyntheticSceneConfig:
    participant_id: int = 1
    gait_speed: float = 1.0
    circuit: str = "right_wide"
    noise_level: float = 0.02  # RGB noise std as a fraction of full scale
    resolution: int = 480
    fps: int = 30
    stand_s: float = 10.0
    walk_m: float = 3.0
    turn_wide_s: float = 6.0
    turn_tight_s: float = 3.5
    joy_lead_s: float = 0.3  # intention marks lead device marks by this lag
    # scene geometry (fractions of the image side); the whole body, including
    # its stepping, leaning and shifting, stays inside the central third of
    # the frame, mirroring a user standing between the walker handles
    stripe_period_frac: float = 16 / 480
    leg_top_frac: float = 0.36
    leg_width_frac: float = 0.07
    leg_height_frac: float = 0.17
    leg_gap_frac: float = 0.06
    hip_height_frac: float = 0.06
    step_amp_frac: float = 0.05
    turn_shift_frac: float = 0.04
    turn_slant: float = 0.30  # horizontal lean per row during turns
    turn_ramp_s: float = 0.5
    shear_divisor: float = 10.0  # background shear: period/this px per frame
    # optional per-trial stance jitter (fraction of the frame side)
    stance_dx_frac: float = 0.0
    stance_dy_frac: float = 0.0
    # appearance: a faint floor pattern under high-contrast legs keeps the
    # body the dominant visual feature, as on a plain indoor floor
    bg_dark: int = 88
    bg_light: int = 92
    # depth layout (mm)
    leg_depth_mm: float = 1200.0
    background_depth_mm: float = 3000.0
    floor_near_mm: float = 1000.0
    floor_far_mm: float = 2400.0
    # optional explicit phase plan overriding the circuit sequence
    script: tuple[tuple[ActionClass, float], ...] | None = None

    def __post_init__(self):
        if self.gait_speed not in GAIT_SPEEDS:
            raise ConfigError(f"gait_speed must be one of {GAIT_SPEEDS}, got {self.gait_speed}")
        if self.circuit not in CIRCUITS:
            raise ConfigError(f"unknown circuit {self.circuit!r}")
        if self.resolution < 64:
            raise ConfigError("resolution must be >= 64")
        if self.noise_level < 0:
            raise ConfigError("noise_level must be >= 0")
        if self.script is not None:
            if not self.script:
                raise ConfigError("script must contain at least one phase")
            if any(d <= 0 for _, d in self.script):
                raise ConfigError("script phase durations must be positive")
        if self.phases()[0][1] <= self.joy_lead_s:
            raise ConfigError("first phase must outlast joy_lead_s")

    @classmethod
    def desk(cls, **overrides) -> "SyntheticSceneConfig":
        """Small, fast preset for CPU-scale runs."""
        base = dict(
            resolution=240,
            stand_s=2.0,
            walk_m=2.4,
            turn_wide_s=3.2,
            turn_tight_s=2.4,
        )
        base.update(overrides)
        return cls(**base)

    def phases(self) -> list[tuple[ActionClass, float]]:
        """The trial's (class, duration) plan."""
        if self.script is not None:
            return list(self.script)
        walk_s = self.walk_m / self.gait_speed
        turn_s = self.turn_wide_s if self.circuit.endswith("wide") else self.turn_tight_s
        return [
            (ActionClass.STOP, self.stand_s),
            (ActionClass.WALK, walk_s),
            (turn_class_for_circuit(self.circuit), turn_s),
            (ActionClass.WALK, walk_s),
            (ActionClass.STOP, self.stand_s),
        ]


class SyntheticRenderer:
    """Frame-addressable renderer; bit-deterministic under (config, seed)."""

    def __init__(self, config: SyntheticSceneConfig, seed: int):
        self.config = config
        self.seed = int(seed)
        r = config.resolution
        self.period = max(4, 2 * round(r * config.stripe_period_frac / 2))
        self._build_timeline()
        self._build_geometry()
        # stable per-participant appearance variation
        prng = np.random.default_rng([0x5CE9E, config.participant_id])
        self._leg_color = np.clip(
            np.array([60, 90, 200]) + prng.integers(-20, 21, size=3), 0, 255
        ).astype(np.uint8)
        self._width_factor = float(prng.uniform(0.9, 1.1))
        self._step_freq = config.gait_speed / 0.64 * float(prng.uniform(0.9, 1.1))
        # per-trial stance offset, seeded by the trial seed
        srng = np.random.default_rng([0xA5117, self.seed])
        self._stance_dx = float(srng.uniform(-1, 1)) * config.stance_dx_frac * r
        self._stance_dy = float(srng.uniform(-1, 1)) * config.stance_dy_frac * r

    # -- timeline ---------------------------------------------------------

    def _build_timeline(self):
        cfg = self.config
        phases = cfg.phases()
        starts = np.concatenate([[0.0], np.cumsum([d for _, d in phases])])
        total = float(starts[-1])
        self.num_frames = int(round(total * cfg.fps))
        vel = [(float(starts[k]), phases[k][0]) for k in range(len(phases))]
        joy = [(0.0, phases[0][0])] + [
            (float(starts[k]) - cfg.joy_lead_s, phases[k][0]) for k in range(1, len(phases))
        ]
        self.vel = LabelTrack(source="VEL", transitions=tuple(vel))
        self.joy = LabelTrack(source="JOY", transitions=tuple(joy))

        ts = np.arange(self.num_frames) / cfg.fps
        self._device_class = np.array([self.vel.class_at(t) for t in ts], dtype=np.int64)
        self._human_class = np.array([self.joy.class_at(t) for t in ts], dtype=np.int64)
        # joy-track phase start time for each frame (drives turn ramps)
        joy_times = np.array([t for t, _ in joy])
        self._human_phase_start = joy_times[
            np.searchsorted(joy_times, ts, side="right") - 1
        ]

        walking = self._device_class == ActionClass.WALK
        turn_sign = np.where(
            self._device_class == ActionClass.TURN_RIGHT,
            1,
            np.where(self._device_class == ActionClass.TURN_LEFT, -1, 0),
        )
        walk_before = np.concatenate([[0], np.cumsum(walking)[:-1]])
        turn_before = np.concatenate([[0], np.cumsum(turn_sign)[:-1]])
        self._oy = np.rint(self.period * walk_before / FLOW_PERIOD_FRAMES).astype(int)
        self._ox = np.rint(self.period * turn_before / cfg.shear_divisor).astype(int)

    # -- geometry ---------------------------------------------------------

    def _build_geometry(self):
        cfg = self.config
        r = cfg.resolution
        self._rows = np.arange(r)[:, None]
        self._cols = np.arange(r)[None, :]
        self.floor_start_row = r - r // 4
        rows = np.arange(self.floor_start_row, r)
        span = max(1, r - 1 - self.floor_start_row)
        self._floor_ramp = cfg.floor_far_mm + (cfg.floor_near_mm - cfg.floor_far_mm) * (
            rows - self.floor_start_row
        ) / span

    def _leg_layout(self, i: int):
        """Per-frame body geometry: hip box plus two leg column ranges per row."""
        cfg = self.config
        r = cfg.resolution
        t = i / cfg.fps
        human = ActionClass(int(self._human_class[i]))
        moving = human != ActionClass.STOP
        turning = human in (ActionClass.TURN_RIGHT, ActionClass.TURN_LEFT)
        sign = 1 if human == ActionClass.TURN_RIGHT else -1

        lw = max(2, round(cfg.leg_width_frac * r * self._width_factor))
        gap = max(4, round(cfg.leg_gap_frac * r))
        hip_top = round(cfg.leg_top_frac * r + self._stance_dy)
        hip_bot = hip_top + max(2, round(cfg.hip_height_frac * r))
        leg_len = round(cfg.leg_height_frac * r)
        amp = cfg.step_amp_frac * r

        shift = 0.0
        slant = 0.0
        if turning:
            ramp = min(1.0, (t - self._human_phase_start[i]) / cfg.turn_ramp_s)
            shift = sign * cfg.turn_shift_frac * r * ramp
            slant = sign * cfg.turn_slant * ramp
        step = np.sin(2 * np.pi * self._step_freq * t) * amp if moving else 0.0

        cx = r / 2 + self._stance_dx + shift
        left_x0 = round(cx - gap / 2 - lw)
        right_x0 = round(cx + gap / 2)
        hip = (hip_top, hip_bot, left_x0, right_x0 + lw)
        legs = []
        for x0, off in ((left_x0, step), (right_x0, -step)):
            bottom = hip_bot + leg_len + round(off)
            legs.append((hip_bot, bottom, x0, lw, slant))
        return hip, legs

    def leg_mask(self, i: int) -> np.ndarray:
        """Ground-truth body silhouette for frame i (bool HxW)."""
        r = self.config.resolution
        hip, legs = self._leg_layout(i)
        mask = np.zeros((r, r), dtype=bool)
        top, bot, x0, x1 = hip
        mask[top:bot, max(0, x0) : min(r, x1)] = True
        # the lean starts a few rows below the hip so the junction keeps clean
        # right angles (a 5x5 closing must leave the silhouette unchanged)
        setback = 6
        for top, bot, x0, lw, slant in legs:
            rows = self._rows
            lean = np.clip(rows - top - setback, 0, None)
            lo = x0 + np.rint(slant * lean).astype(int)
            band = (rows >= top) & (rows < min(bot, r))
            mask |= band & (self._cols >= lo) & (self._cols < lo + lw)
        return mask

    def frame(self, i: int) -> FrameRGBD:
        if not 0 <= i < self.num_frames:
            raise IndexError(f"frame {i} outside [0, {self.num_frames})")
        cfg = self.config
        r = cfg.resolution
        half = self.period // 2
        # vertical stripes: invariant under the downward walk flow (oy), but
        # the sideways turn shear (ox) moves them visibly
        stripes = (((self._cols + self._ox[i]) // half) % 2).astype(bool)
        rgb = np.where(stripes[..., None], np.uint8(cfg.bg_light), np.uint8(cfg.bg_dark))
        rgb = np.broadcast_to(rgb, (r, r, 3)).copy()

        depth = np.full((r, r), cfg.background_depth_mm, dtype=np.float64)
        depth[self.floor_start_row :, :] = self._floor_ramp[:, None]

        mask = self.leg_mask(i)
        rgb[mask] = self._leg_color
        depth[mask] = cfg.leg_depth_mm

        if cfg.noise_level > 0:
            rng = np.random.default_rng([self.seed, i])
            noise = rng.normal(0.0, cfg.noise_level * 255.0, size=rgb.shape)
            rgb = np.clip(np.rint(rgb.astype(np.float64) + noise), 0, 255).astype(np.uint8)

        return FrameRGBD(
            rgb=rgb, depth=np.rint(depth).astype(np.uint16), timestamp=i / cfg.fps
        )

    def frames(self) -> list[FrameRGBD]:
        return [self.frame(i) for i in range(self.num_frames)]


def generate_synthetic_trial(config: SyntheticSceneConfig, seed: int) -> TrialRecording:
    """Render a full trial into memory.

    Deterministic: equal (config, seed) yield byte-identical trials. For long
    or high-resolution configs prefer streaming frames from a
    SyntheticRenderer instead of materializing the list.
    """
    renderer = SyntheticRenderer(config, seed)
    return TrialRecording(
        participant_id=config.participant_id,
        gait_speed=config.gait_speed,
        circuit=config.circuit,
        frames=renderer.frames(),
        joy=renderer.joy,
        vel=renderer.vel,
    )


def config_for_trial(
    base: SyntheticSceneConfig, participant_id: int, gait_speed: float, circuit: str
) -> SyntheticSceneConfig:
    return replace(
        base, participant_id=participant_id, gait_speed=gait_speed, circuit=circuit
    )
