"""Run configuration: defaults, YAML overrides, validation.

A RunConfig is a tree of frozen dataclasses. YAML files override any subset
of fields; unknown keys fail loudly with their full path rather than being
ignored, since a typo that silently reverts to a default is the worst kind
of configuration bug. `resolve_params` turns the tree plus an environment
name into the flat TrialParams the mission consumes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, is_dataclass

import yaml

from irribot.fieldsim import (
    ENV_NAMES,
    BatteryModel,
    DetectorProfile,
    PumpModel,
    build_environment,
    builtin_profile,
)
from irribot.kinematics import ArmGeometry, CalibrationState
from irribot.leveling import PidGains, PlatformPlant, tune_leveling
from irribot.mission import TrialParams


class ConfigError(ValueError):
    """Structural problem in a config file: unknown key or bad value."""


class ConfigParseError(ConfigError):
    """The file is not even syntactically valid."""


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


@dataclass(frozen=True)
class ArmConfig:
    l1: float = 120.0  # mm
    l2: float = 160.0  # mm
    theta_offset: float = 15.0  # deg

    def __post_init__(self):
        _require(self.l1 > 0 and self.l2 > 0, "arm link lengths must be positive")


@dataclass(frozen=True)
class CalibrationConfig:
    s: float = 0.1  # mm per pixel
    u0: float = 2000.0
    v0: float = 1500.0
    delta_x: float = 150.0  # mm, camera axis ahead of the arm base
    delta_y: float = 0.0
    z_const: float = 150.0  # mm, fixed working height

    def __post_init__(self):
        _require(self.s > 0, "pixel scale must be positive")
        _require(self.z_const > 0, "working height must be positive")


@dataclass(frozen=True)
class PlantConfig:
    max_rate: float = 8.0  # deg/s actuator authority
    delay: float = 0.05  # s transport delay
    tau: float = 0.15  # s actuator lag

    def __post_init__(self):
        _require(self.max_rate > 0, "max_rate must be positive")
        _require(self.delay >= 0 and self.tau > 0, "delay >= 0 and tau > 0 required")


@dataclass(frozen=True)
class LevelingConfig:
    rule: str = "classic"  # which tuning table to apply
    integral_authority: float = 8.0  # deg/s of control the integral may hold
    filter_window: int = 5  # moving-average depth on the tilt signal
    noise_std: float = 0.05  # deg, sensor noise fed to mission episodes
    drift_rate: float = 0.0015  # deg/s of gyro bias growth
    shielded: bool = True
    shielding_factor: float = 0.6
    reset_threshold: float = 5.0  # deg of accumulated bias forcing a reset
    level_band: float = 0.5  # deg; inside this the platform counts as level
    episode_window: float = 4.0  # s budget for one leveling episode
    episode_tick: float = 0.01  # s
    kp: float | None = None  # set all three to bypass auto-tuning
    ki: float | None = None
    kd: float | None = None

    def __post_init__(self):
        manual = [self.kp is None, self.ki is None, self.kd is None]
        _require(all(manual) or not any(manual),
                 "manual gains need kp, ki and kd together")
        if not any(manual):
            _require(self.kp > 0 and self.ki >= 0 and self.kd >= 0,
                     "manual gains must be positive (kp) and non-negative (ki, kd)")
        _require(self.filter_window >= 1, "filter_window must be at least 1")
        _require(self.noise_std >= 0 and self.drift_rate >= 0,
                 "noise and drift rates must be non-negative")
        _require(0 <= self.shielding_factor <= 1, "shielding_factor must be in [0, 1]")
        _require(self.reset_threshold > 0, "reset_threshold must be positive")
        _require(self.level_band > 0, "level_band must be positive")
        _require(self.episode_tick > 0 and self.episode_window > self.episode_tick,
                 "episode window must exceed the tick")


@dataclass(frozen=True)
class DetectionConfig:
    conf_threshold: float = 0.5
    iou_threshold: float = 0.3

    def __post_init__(self):
        _require(0 <= self.conf_threshold <= 1, "conf_threshold must be in [0, 1]")
        _require(0 <= self.iou_threshold <= 1, "iou_threshold must be in [0, 1]")


@dataclass(frozen=True)
class PumpConfig:
    flow_rate: float = 30.0  # mL/s
    spray_radius: float = 20.0  # mm
    target_volume: float = 100.0  # mL per pot

    def __post_init__(self):
        _require(self.flow_rate > 0, "flow_rate must be positive")
        _require(self.spray_radius > 0, "spray_radius must be positive")
        _require(self.target_volume > 0, "target_volume must be positive")


@dataclass(frozen=True)
class BatteryConfig:
    capacity_mah: float = 2400.0
    voltage_full: float = 12.6
    voltage_cutoff: float = 11.1
    drive_ma: float = 10824.0
    leveling_ma: float = 3416.0
    arm_ma: float = 1100.0
    pump_ma: float = 1400.0
    compute_ma: float = 900.0

    def __post_init__(self):
        _require(self.capacity_mah > 0, "capacity must be positive")
        _require(self.voltage_full > self.voltage_cutoff > 0,
                 "voltage_full must exceed voltage_cutoff")
        for name in ("drive_ma", "leveling_ma", "arm_ma", "pump_ma", "compute_ma"):
            _require(getattr(self, name) >= 0, f"{name} must be non-negative")


@dataclass(frozen=True)
class TimingConfig:
    sense_settle: float = 0.5  # s of camera settling before inference
    arm_move: float = 1.5  # s per positioning move
    mission_tick: float = 0.05  # s

    def __post_init__(self):
        _require(self.sense_settle >= 0 and self.arm_move >= 0,
                 "phase times must be non-negative")
        _require(self.mission_tick > 0, "mission_tick must be positive")


@dataclass(frozen=True)
class ScoringConfig:
    match_gate: float = 100.0  # mm, detection-to-pot association radius
    sigma_mech: float = 4.0  # mm per-axis mechanical jitter
    tilt_lever: float = 150.0  # mm nozzle height above the pot plane
    flood_efficiency: float = 0.6  # baseline for the savings comparison

    def __post_init__(self):
        _require(self.match_gate > 0, "match_gate must be positive")
        _require(self.sigma_mech >= 0, "sigma_mech must be non-negative")
        _require(self.tilt_lever >= 0, "tilt_lever must be non-negative")
        _require(0 < self.flood_efficiency < 1, "flood_efficiency must be in (0, 1)")


@dataclass(frozen=True)
class EnvTuning:
    """Per-environment operating point: detector profile plus dispense/drive."""

    dispense_overshoot: float
    spray_efficiency: float
    drive_speed: float  # mm/s
    accuracy: float  # detector per-pot-per-frame hit probability
    fp_rate: float  # spurious detections per frame
    inference_time_ms: float
    center_noise_px: float

    def __post_init__(self):
        _require(0 <= self.dispense_overshoot < 1, "dispense_overshoot must be in [0, 1)")
        _require(0 < self.spray_efficiency <= 1, "spray_efficiency must be in (0, 1]")
        _require(self.drive_speed > 0, "drive_speed must be positive")
        _require(0 <= self.accuracy <= 1, "accuracy must be in [0, 1]")
        _require(0 <= self.fp_rate <= 1, "fp_rate must be in [0, 1]")
        _require(self.inference_time_ms >= 0, "inference_time_ms must be non-negative")
        _require(self.center_noise_px >= 0, "center_noise_px must be non-negative")


_ENV_OPERATING_POINTS = {
    "standard_greenhouse": (0.05, 0.952, 300.0),
    "hilly_terrain": (0.08, 0.926, 300.0),
    "complex_lighting": (0.07, 0.935, 241.0),
}


def _default_env_tuning():
    out = {}
    for name, (overshoot, spray_eff, speed) in _ENV_OPERATING_POINTS.items():
        profile = builtin_profile(name)
        out[name] = EnvTuning(
            overshoot, spray_eff, speed,
            accuracy=profile.accuracy, fp_rate=profile.fp_rate,
            inference_time_ms=profile.inference_time_ms,
            center_noise_px=profile.center_noise_px,
        )
    return out


@dataclass(frozen=True)
class RunConfig:
    seed: int = 42
    trials: int = 10
    env: str = "all"
    pot_count: int = 20
    arm: ArmConfig = field(default_factory=ArmConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    plant: PlantConfig = field(default_factory=PlantConfig)
    leveling: LevelingConfig = field(default_factory=LevelingConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    pump: PumpConfig = field(default_factory=PumpConfig)
    battery: BatteryConfig = field(default_factory=BatteryConfig)
    timing: TimingConfig = field(default_factory=TimingConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    environments: dict = field(default_factory=_default_env_tuning)

    def __post_init__(self):
        _require(self.trials >= 1, "trials must be at least 1")
        _require(self.pot_count >= 1, "pot_count must be at least 1")
        _require(self.env == "all" or self.env in ENV_NAMES,
                 f"env must be 'all' or one of {', '.join(ENV_NAMES)}")
        for name in self.environments:
            _require(name in ENV_NAMES, f"unknown environment key {name!r}")
        for name in ENV_NAMES:
            _require(name in self.environments, f"missing tuning for {name}")

    def env_names(self):
        return list(ENV_NAMES) if self.env == "all" else [self.env]


def default_config():
    return RunConfig()


# --------------------------------------------------------------------------
# YAML plumbing


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'top level'} must be a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown key {where}{unknown[0]!r}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        child = f"{path}.{name}" if path else name
        if isinstance(f.type, str) and f.type in _SECTION_TYPES:
            kwargs[name] = _build(_SECTION_TYPES[f.type], value, child)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad section {path or 'top level'}: {exc}") from None


_SECTION_TYPES = {
    "ArmConfig": ArmConfig,
    "CalibrationConfig": CalibrationConfig,
    "PlantConfig": PlantConfig,
    "LevelingConfig": LevelingConfig,
    "DetectionConfig": DetectionConfig,
    "PumpConfig": PumpConfig,
    "BatteryConfig": BatteryConfig,
    "TimingConfig": TimingConfig,
    "ScoringConfig": ScoringConfig,
}


def _build_envs(data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must be a mapping of environment names")
    merged = dict(_default_env_tuning())
    for name, body in data.items():
        if name not in merged:
            raise ConfigError(f"unknown key {path}.{name!r}")
        if not isinstance(body, dict):
            raise ConfigError(f"{path}.{name} must be a mapping")
        base = dataclasses.asdict(merged[name])
        unknown = sorted(set(body) - set(base))
        if unknown:
            raise ConfigError(f"unknown key {path}.{name}.{unknown[0]!r}")
        base.update(body)
        merged[name] = EnvTuning(**base)
    return merged


def _merge_into_defaults(data):
    """Overlay a parsed YAML mapping onto the default tree."""
    if data is None:
        return default_config()
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping at the top level")
    base = {}
    for f in fields(RunConfig):
        if f.name in data:
            base[f.name] = data[f.name]
    # route nested sections through their dataclasses, scalars straight in
    kwargs = {}
    for name, value in base.items():
        if name == "environments":
            kwargs[name] = _build_envs(value, "environments")
        elif name in ("seed", "trials", "env", "pot_count"):
            kwargs[name] = value
        else:
            kwargs[name] = _build(_SECTION_TYPES[type_name_for(name)], value, name)
    unknown = sorted(set(data) - {f.name for f in fields(RunConfig)})
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}")
    return RunConfig(**kwargs)


def type_name_for(section):
    return {
        "arm": "ArmConfig",
        "calibration": "CalibrationConfig",
        "plant": "PlantConfig",
        "leveling": "LevelingConfig",
        "detection": "DetectionConfig",
        "pump": "PumpConfig",
        "battery": "BatteryConfig",
        "timing": "TimingConfig",
        "scoring": "ScoringConfig",
    }[section]


def load_config(path):
    """Parse a YAML file into a RunConfig, overlaying the defaults."""
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigParseError(f"could not parse {path}: {exc}") from None
    return _merge_into_defaults(data)


def as_dict(cfg):
    """Plain nested-dict rendering, field order preserved."""
    def plain(obj):
        if is_dataclass(obj) and not isinstance(obj, type):
            return {f.name: plain(getattr(obj, f.name)) for f in fields(obj)}
        if isinstance(obj, dict):
            return {k: plain(v) for k, v in obj.items()}
        return obj

    return plain(cfg)


def dump_config(cfg):
    """Stable YAML rendering of the full tree, field order preserved."""
    return yaml.safe_dump(as_dict(cfg), sort_keys=False)


# --------------------------------------------------------------------------
# bridges into the models


def arm_geometry(cfg):
    return ArmGeometry(cfg.arm.l1, cfg.arm.l2, cfg.arm.theta_offset)


def calibration_state(cfg):
    c = cfg.calibration
    return CalibrationState(s=c.s, u0=c.u0, v0=c.v0, delta_x=c.delta_x,
                            delta_y=c.delta_y, z_const=c.z_const)


def platform_plant(cfg):
    return PlatformPlant(cfg.plant.max_rate, cfg.plant.delay, cfg.plant.tau)


def battery_model(cfg):
    b = cfg.battery
    return BatteryModel(
        capacity_mah=b.capacity_mah, voltage_full=b.voltage_full,
        voltage_cutoff=b.voltage_cutoff, drive_ma=b.drive_ma,
        leveling_ma=b.leveling_ma, arm_ma=b.arm_ma, pump_ma=b.pump_ma,
        compute_ma=b.compute_ma,
    )


def pump_model(cfg, env_name):
    tuning = cfg.environments[env_name]
    return PumpModel(
        flow_rate=cfg.pump.flow_rate,
        dispense_overshoot=tuning.dispense_overshoot,
        spray_radius=cfg.pump.spray_radius,
        spray_efficiency=tuning.spray_efficiency,
    )


def tuned_gains(cfg):
    """Auto-tune the leveling loop for the configured platform."""
    gains, ku, tu = tune_leveling(
        platform_plant(cfg), rule=cfg.leveling.rule,
        integral_authority=cfg.leveling.integral_authority,
    )
    return gains, ku, tu


def gains_for(cfg):
    """Manual gains when the config pins them, auto-tuned otherwise."""
    lv = cfg.leveling
    if lv.kp is not None:
        limit = lv.integral_authority / lv.ki if lv.ki > 0 else None
        return PidGains(kp=lv.kp, ki=lv.ki, kd=lv.kd, integral_limit=limit)
    gains, _, _ = tuned_gains(cfg)
    return gains


def environment_for(cfg, name):
    """Canonical environment with this config's detector profile applied."""
    env = build_environment(name, cfg.pot_count)
    t = cfg.environments[name]
    profile = DetectorProfile(t.accuracy, t.fp_rate, t.inference_time_ms,
                              t.center_noise_px)
    return dataclasses.replace(env, detector_profile=profile)


def resolve_params(cfg, env_name, gains=None):
    """Flatten the config tree into the mission's TrialParams."""
    if gains is None:
        gains = gains_for(cfg)
    tuning = cfg.environments[env_name]
    lv, tm, sc = cfg.leveling, cfg.timing, cfg.scoring
    return TrialParams(
        cal=calibration_state(cfg),
        geom=arm_geometry(cfg),
        gains=gains,
        pump=pump_model(cfg, env_name),
        battery=battery_model(cfg),
        plant_max_rate=cfg.plant.max_rate,
        plant_delay=cfg.plant.delay,
        plant_tau=cfg.plant.tau,
        target_volume_ml=cfg.pump.target_volume,
        flood_efficiency=sc.flood_efficiency,
        imu_noise_std=lv.noise_std,
        drift_rate=lv.drift_rate,
        drift_shielded=lv.shielded,
        shielding_factor=lv.shielding_factor,
        reset_threshold=lv.reset_threshold,
        sigma_mech_mm=sc.sigma_mech,
        tilt_lever_mm=sc.tilt_lever,
        match_gate_mm=sc.match_gate,
        level_band_deg=lv.level_band,
        conf_threshold=cfg.detection.conf_threshold,
        iou_threshold=cfg.detection.iou_threshold,
        sense_settle_s=tm.sense_settle,
        arm_move_s=tm.arm_move,
        drive_speed_mm_s=tuning.drive_speed,
        mission_tick_s=tm.mission_tick,
        leveling_window_s=lv.episode_window,
        leveling_tick_s=lv.episode_tick,
    )
