"""Synthetic car-following traces with labeled brake episodes.

A leader tracks a piecewise speed schedule. The follower runs an
intelligent-driver-model acceleration law, but without the pedal it can only
shed speed up to ``coast_decel``. A hysteretic policy presses the brake when
the basic TTC (range / ego speed) or the range falls below its threshold;
while the pedal is down the follower decelerates by at least
``brake_min_decel``. Parameters are test fixtures, not calibrated driver
models.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ._io import atomic_write_text
from .errors import ConfigError
from .pipeline import MAX_EGO_SPEED, RawTick, TurnSignal, format_trace

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LeaderSegment:
    start: float        # s, when this target becomes active
    speed: float        # m/s target
    rate: float = 1.0   # m/s^2 used to approach the target


@dataclass(frozen=True)
class FollowerParams:
    time_headway: float = 1.4
    desired_speed: float = 33.0
    max_accel: float = 1.2
    comfort_decel: float = 2.0
    max_decel: float = 7.0
    min_gap: float = 8.0
    coast_decel: float = 0.6
    brake_min_decel: float = 0.3


@dataclass(frozen=True)
class BrakePolicy:
    ttc_threshold: float = 1.1
    headway_threshold: float = 15.0
    # exit once both quantities exceed threshold * (1 + hysteresis)
    hysteresis: float = 0.3


@dataclass(frozen=True)
class NoiseConfig:
    v_ego: float = 0.0
    v_prec: float = 0.0
    range: float = 0.0


DEFAULT_LEADER_PROFILE = (
    LeaderSegment(0.0, 25.0, 1.0),
    LeaderSegment(30.0, 18.0, 1.5),
    LeaderSegment(60.0, 28.0, 1.0),
    LeaderSegment(95.0, 12.0, 4.0),
    LeaderSegment(120.0, 24.0, 1.0),
    LeaderSegment(150.0, 20.0, 2.0),
)


@dataclass(frozen=True)
class SimConfig:
    duration: float = 180.0
    dt: float = 0.1
    leader_profile: tuple = DEFAULT_LEADER_PROFILE
    follower: FollowerParams = field(default_factory=FollowerParams)
    brake_policy: BrakePolicy = field(default_factory=BrakePolicy)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    curvature: float = 2e-4
    seed: int = 0

    def validate(self):
        if not self.dt > 0:
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        if not self.duration >= self.dt:
            raise ConfigError(f"duration must be >= dt, got {self.duration}")
        if not self.leader_profile:
            raise ConfigError("leader_profile must not be empty")
        starts = [s.start for s in self.leader_profile]
        if starts != sorted(starts):
            raise ConfigError("leader_profile segments must be in start order")
        for i, seg in enumerate(self.leader_profile):
            if seg.speed < 0 or not seg.rate > 0:
                raise ConfigError(f"leader_profile[{i}]: speed must be >= 0 and rate > 0")
        for name, value in asdict(self.follower).items():
            if not value > 0:
                raise ConfigError(f"follower.{name} must be > 0, got {value}")
        p = self.brake_policy
        if not (p.ttc_threshold > 0 and p.headway_threshold > 0):
            raise ConfigError("brake_policy thresholds must be > 0")
        if p.hysteresis < 0:
            raise ConfigError("brake_policy.hysteresis must be >= 0")
        for name, value in asdict(self.noise).items():
            if value < 0:
                raise ConfigError(f"noise.{name} must be >= 0, got {value}")
        return self


@dataclass(frozen=True, eq=False)
class SimTrace:
    """Noise-free state plus the emitted (possibly noisy) channels."""

    t: np.ndarray
    v_ego: np.ndarray
    v_prec: np.ndarray
    range: np.ndarray
    accel: np.ndarray
    brake: np.ndarray
    throttle: np.ndarray
    measured_v_ego: np.ndarray
    measured_v_prec: np.ndarray
    measured_range: np.ndarray
    curvature: float

    def ticks(self):
        return [
            RawTick(float(self.t[i]), float(self.measured_v_ego[i]), float(self.measured_v_prec[i]),
                    float(self.measured_range[i]), self.curvature, TurnSignal.NONE, False,
                    int(self.brake[i]), float(self.throttle[i]))
            for i in range(self.t.size)
        ]


def equilibrium_gap(speed, follower):
    """Gap at which the IDM law gives zero acceleration behind an equal-speed leader."""
    f = follower
    ratio = min(speed / f.desired_speed, 0.99)
    return (f.min_gap + speed * f.time_headway) / np.sqrt(1.0 - ratio ** 4)


def idm_accel(v, v_lead, gap, f):
    s_star = f.min_gap + max(0.0, v * f.time_headway + v * (v - v_lead) / (2.0 * np.sqrt(f.max_accel * f.comfort_decel)))
    return f.max_accel * (1.0 - (v / f.desired_speed) ** 4 - (s_star / max(gap, 0.1)) ** 2)


def _leader_target(profile, t):
    seg = profile[0]
    for s in profile:
        if s.start <= t:
            seg = s
        else:
            break
    return seg


def simulate_arrays(config):
    config.validate()
    f = config.follower
    p = config.brake_policy
    n = int(np.floor(config.duration / config.dt + 1e-9)) + 1
    dt = config.dt

    t = np.round(np.arange(n) * dt, 9)
    v_ego = np.empty(n)
    v_prec = np.empty(n)
    gap = np.empty(n)
    accel = np.empty(n)
    brake = np.zeros(n, dtype=np.int64)

    v_prec[0] = config.leader_profile[0].speed
    v_ego[0] = v_prec[0]
    gap[0] = equilibrium_gap(v_ego[0], f)
    braking = False

    for i in range(n):
        ve, vp, s = v_ego[i], v_prec[i], gap[i]
        ttc = s / ve if ve > 0 else np.inf
        if braking:
            exit_ = ttc > p.ttc_threshold * (1.0 + p.hysteresis) and s > p.headway_threshold * (1.0 + p.hysteresis)
            braking = not exit_
        else:
            braking = ttc < p.ttc_threshold or s < p.headway_threshold

        a = idm_accel(ve, vp, s, f)
        if braking:
            a = min(a, -f.brake_min_decel)
            a = max(a, -f.max_decel)
        else:
            a = min(max(a, -f.coast_decel), f.max_accel)
        if ve + a * dt < 0:
            a = -ve / dt
        accel[i] = a
        brake[i] = int(braking)

        if i + 1 < n:
            seg = _leader_target(config.leader_profile, t[i])
            dv = np.clip(seg.speed - vp, -seg.rate * dt, seg.rate * dt)
            gap[i + 1] = s + (vp - ve) * dt
            v_ego[i + 1] = ve + a * dt
            v_prec[i + 1] = max(vp + dv, 0.0)

    throttle = np.where(brake == 1, 0.0, np.clip(100.0 * accel / f.max_accel, 0.0, 100.0))

    rng = np.random.default_rng(config.seed)
    nz = config.noise
    m_ve = np.clip(v_ego + rng.normal(0.0, 1.0, n) * nz.v_ego, 0.0, MAX_EGO_SPEED) if nz.v_ego else np.clip(v_ego, 0.0, MAX_EGO_SPEED)
    m_vp = np.maximum(v_prec + rng.normal(0.0, 1.0, n) * nz.v_prec, 0.0) if nz.v_prec else v_prec.copy()
    m_rg = np.maximum(gap + rng.normal(0.0, 1.0, n) * nz.range, 0.0) if nz.range else gap.copy()

    return SimTrace(t, v_ego, v_prec, gap, accel, brake, throttle, m_ve, m_vp, m_rg, float(config.curvature))


def simulate(config):
    """Run one simulation and return its ticks at ``1 / dt`` Hz."""
    return simulate_arrays(config).ticks()


# --------------------------------------------------------------------------
# corpus generation
# --------------------------------------------------------------------------

def jittered_config(template, rng, jitter=1.0):
    """Perturb follower, policy and leader schedule multiplicatively.

    ``jitter`` scales every perturbation; 0 returns the template untouched.
    """
    if jitter == 0:
        return template

    def scale(width):
        return 1.0 + jitter * rng.uniform(-width, width)

    f = template.follower
    follower = replace(
        f,
        time_headway=f.time_headway * scale(0.2),
        desired_speed=f.desired_speed * scale(0.1),
        max_accel=f.max_accel * scale(0.2),
        coast_decel=f.coast_decel * scale(0.2),
    )
    p = template.brake_policy
    policy = replace(p, ttc_threshold=p.ttc_threshold * scale(0.1), headway_threshold=p.headway_threshold * scale(0.1))
    segments = []
    for k, seg in enumerate(template.leader_profile):
        shift = 0.0 if k == 0 else jitter * rng.uniform(-5.0, 5.0)
        segments.append(LeaderSegment(
            start=max(0.0, seg.start + shift),
            speed=float(np.clip(seg.speed * scale(0.15), 10.0, 35.0)),
            rate=seg.rate * scale(0.2),
        ))
    segments.sort(key=lambda s: s.start)
    return replace(template, follower=follower, brake_policy=policy, leader_profile=tuple(segments))


def simulate_corpus(template, n_events, seed, out_dir, jitter=1.0):
    """Write ``n_events`` trace files plus ``manifest.json`` into ``out_dir``.

    Trace ``i`` uses its own child seed of ``seed``, so the corpus is a pure
    function of the arguments.

    :returns: list of trace paths in index order.
    """
    if n_events < 1:
        raise ConfigError(f"n_events must be >= 1, got {n_events}")
    if jitter < 0:
        raise ConfigError(f"jitter must be >= 0, got {jitter}")
    template.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(seed).spawn(n_events)
    width = max(4, len(str(n_events - 1)))
    paths = []
    manifest = {"seed": seed, "n_events": n_events, "jitter": jitter, "traces": []}
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        trace_seed = int(child.generate_state(1)[0])
        cfg = replace(jittered_config(template, rng, jitter), seed=trace_seed).validate()
        ticks = simulate(cfg)
        path = out / f"trace_{i:0{width}d}.csv"
        atomic_write_text(path, format_trace(ticks, hz=1.0 / cfg.dt))
        paths.append(path)
        manifest["traces"].append({"file": path.name, "config": asdict(cfg)})
        logger.debug("wrote %s (%d ticks)", path, len(ticks))
    atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    return paths
