"""Seeded models of everything physical in the field.

Environments (terrain slope, lighting), pot layouts, a stochastic detector
standing in for the onboard vision model, IMU readings with drift bias, pump
dispensing with exact spray-disk/pot-opening overlap, and a linear-voltage
battery budget. Every stochastic draw flows from an injected generator; the
module holds no global randomness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from irribot.detect import CIRCULAR, RECTANGULAR, BBox, Detection
from irribot.kinematics import ArmTarget, arm_to_pixel

ENV_STANDARD = "standard_greenhouse"
ENV_HILLY = "hilly_terrain"
ENV_COMPLEX = "complex_lighting"
ENV_NAMES = (ENV_STANDARD, ENV_HILLY, ENV_COMPLEX)

# aspect-ratio sampling stays strictly inside the geometry bands so the
# detector's own boxes never land on an excluded boundary
_RATIO_RANGES = {CIRCULAR: (0.92, 1.08), RECTANGULAR: (1.25, 1.47)}


class LayoutError(RuntimeError):
    """Random placement failed to satisfy spacing within the attempt budget."""


@dataclass(frozen=True)
class DetectorProfile:
    """Aggregate behavior of the detector in one environment.

    center_noise_px is the per-axis localization scatter of a reported box
    center; it drives the positioning-error budget downstream.
    """

    accuracy: float  # per-pot-per-frame detection probability
    fp_rate: float  # spurious detections per frame
    inference_time_ms: float
    center_noise_px: float = 10.0

    def __post_init__(self):
        if not 0 <= self.accuracy <= 1:
            raise ValueError("accuracy must be in [0, 1]")
        if not 0 <= self.fp_rate <= 1:
            raise ValueError("fp_rate must be in [0, 1]")
        if self.inference_time_ms < 0 or self.center_noise_px < 0:
            raise ValueError("times and noise must be non-negative")


@dataclass(frozen=True)
class Pot:
    pot_id: int
    x: float  # mm
    y: float  # mm
    shape: str  # circular | rectangular
    width: float  # mm; diameter for circular pots
    height: float  # mm; equals width for circular pots

    def __post_init__(self):
        if self.shape not in (CIRCULAR, RECTANGULAR):
            raise ValueError(f"unknown pot shape {self.shape!r}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("pot dimensions must be positive")
        if self.shape == CIRCULAR and self.width != self.height:
            raise ValueError("circular pots need equal width and height")

    @property
    def radius(self):
        return self.width / 2.0


@dataclass(frozen=True)
class PotLayout:
    pots: tuple
    min_spacing: float  # mm, pairwise center-to-center floor

    def __post_init__(self):
        if self.min_spacing <= 0:
            raise ValueError("min_spacing must be positive")
        pots = self.pots
        for i in range(len(pots)):
            for j in range(i + 1, len(pots)):
                d = math.hypot(pots[i].x - pots[j].x, pots[i].y - pots[j].y)
                if d < self.min_spacing - 1e-9:
                    raise ValueError(
                        f"pots {pots[i].pot_id} and {pots[j].pot_id} are {d:.1f} mm "
                        f"apart, below the {self.min_spacing} mm floor"
                    )


def grid_layout(count=20, spacing=600.0, shape=CIRCULAR, width=100.0, height=None, columns=5):
    """Regular grid, pots ordered along a serpentine service path.

    Odd rows run right-to-left so consecutive pots are always one pitch
    apart, which is what a chassis driving the bench actually does.
    """
    if height is None:
        height = width if shape == CIRCULAR else width * 2 / 3
    pots = []
    for i in range(count):
        row, k = divmod(i, columns)
        col = columns - 1 - k if row % 2 else k
        pots.append(Pot(i, col * spacing, row * spacing, shape, width, height))
    return PotLayout(pots=tuple(pots), min_spacing=spacing)


def random_layout(
    count,
    rng,
    *,
    nn_range=(400.0, 800.0),
    shape=CIRCULAR,
    width=100.0,
    height=None,
    max_attempts=10000,
):
    """Scatter pots so each new pot lands nn_range-distant from an existing one.

    Grows a connected cluster: every accepted pot sits within nn_range of its
    anchor and at least nn_range[0] from everything else, so the pairwise
    minimum-spacing invariant holds by construction. Raises LayoutError when
    the attempt budget runs out.
    """
    lo, hi = nn_range
    if not 0 < lo < hi:
        raise ValueError("nn_range must be ordered and positive")
    if height is None:
        height = width
    pots = [Pot(0, 0.0, 0.0, shape, width, height)]
    attempts = 0
    while len(pots) < count:
        attempts += 1
        if attempts > max_attempts:
            raise LayoutError(f"failed to place pot {len(pots)} within {max_attempts} attempts")
        anchor = pots[int(rng.integers(len(pots)))]
        angle = rng.uniform(0.0, 2.0 * math.pi)
        dist = rng.uniform(lo, hi)
        x = anchor.x + dist * math.cos(angle)
        y = anchor.y + dist * math.sin(angle)
        if all(math.hypot(p.x - x, p.y - y) >= lo for p in pots):
            pots.append(Pot(len(pots), x, y, shape, width, height))
    return PotLayout(pots=_service_order(pots), min_spacing=lo)


def _service_order(pots):
    """Re-id pots along a greedy nearest-neighbor chain from the first pot.

    Scattered pots come out of placement in cluster-growth order; driving
    that order would criss-cross the plot. The greedy chain is the natural
    route a chassis takes, and it keeps consecutive hops short.
    """
    remaining = list(pots[1:])
    chain = [pots[0]]
    while remaining:
        last = chain[-1]
        nearest = min(remaining, key=lambda p: math.hypot(p.x - last.x, p.y - last.y))
        remaining.remove(nearest)
        chain.append(nearest)
    return tuple(replace(p, pot_id=i) for i, p in enumerate(chain))


@dataclass(frozen=True)
class LayoutSpec:
    """Recipe for building a layout; random kinds consume the trial generator."""

    kind: str  # grid | random
    count: int = 20
    spacing: float = 600.0  # mm, grid pitch
    nn_range: tuple = (400.0, 800.0)  # mm, random nearest-neighbor window
    shape: str = CIRCULAR
    width: float = 100.0
    height: float = 100.0

    def __post_init__(self):
        if self.kind not in ("grid", "random"):
            raise ValueError(f"unknown layout kind {self.kind!r}")
        if self.count < 1:
            raise ValueError("count must be at least 1")


def realize_layout(spec, rng):
    if spec.kind == "grid":
        return grid_layout(spec.count, spec.spacing, spec.shape, spec.width, spec.height)
    return random_layout(
        spec.count, rng, nn_range=spec.nn_range, shape=spec.shape,
        width=spec.width, height=spec.height,
    )


@dataclass(frozen=True)
class Environment:
    name: str
    slope: float  # degrees
    lux_range: tuple
    detector_profile: DetectorProfile
    layout: LayoutSpec

    def __post_init__(self):
        if self.slope < 0:
            raise ValueError("slope must be non-negative")
        lo, hi = self.lux_range
        if not 0 < lo < hi:
            raise ValueError("lux bounds must be positive and ordered")


_ENV_TABLE = {
    ENV_STANDARD: dict(
        slope=0.0,
        lux_range=(15000.0, 25000.0),
        profile=DetectorProfile(0.987, 0.012, 32.0, center_noise_px=11.0),
        layout=LayoutSpec(kind="grid", spacing=600.0, shape=CIRCULAR, width=100.0, height=100.0),
    ),
    ENV_HILLY: dict(
        slope=10.0,
        lux_range=(20000.0, 60000.0),
        profile=DetectorProfile(0.975, 0.021, 35.0, center_noise_px=26.0),
        layout=LayoutSpec(kind="grid", spacing=600.0, shape=RECTANGULAR, width=120.0, height=80.0),
    ),
    ENV_COMPLEX: dict(
        slope=0.0,
        lux_range=(200.0, 90000.0),
        profile=DetectorProfile(0.960, 0.035, 38.0, center_noise_px=33.0),
        layout=LayoutSpec(kind="random", nn_range=(400.0, 800.0), shape=CIRCULAR,
                          width=100.0, height=100.0),
    ),
}


def builtin_profile(name):
    """The canonical detector profile measured for one environment."""
    return _env_row(name)["profile"]


def _env_row(name):
    try:
        return _ENV_TABLE[name]
    except KeyError:
        raise ValueError(
            f"unknown environment {name!r}; expected one of {', '.join(ENV_NAMES)}"
        ) from None


def build_environment(name, pot_count=20):
    """Standard test environments with their detector profiles and layouts."""
    row = _env_row(name)
    return Environment(
        name=name,
        slope=row["slope"],
        lux_range=row["lux_range"],
        detector_profile=row["profile"],
        layout=replace(row["layout"], count=pot_count),
    )


# --------------------------------------------------------------------------
# detector


def simulate_detection(pots, profile, rng, cal, frame_px=(4000, 3000)):
    """One detector frame over the pots currently in view.

    Pot x/y are camera-axis offsets in mm (the frame is centered on the
    station). Each pot is found with probability `accuracy`; found pots get a
    box whose center scatters by center_noise_px and whose aspect ratio is
    drawn consistently with the pot shape. One spurious detection is injected
    with probability `fp_rate`, placed away from every true pot so it can
    never be confused with one. Draw order is fixed per pot for determinism.
    """
    frame_w, frame_h = frame_px
    detections = []
    for pot in pots:
        if rng.random() >= profile.accuracy:
            continue
        u, v = arm_to_pixel(ArmTarget(pot.x, pot.y, cal.z_const), cal)
        cu = u + rng.normal(0.0, profile.center_noise_px)
        cv = v + rng.normal(0.0, profile.center_noise_px)
        w = (pot.width / cal.s) * (1.0 + rng.normal(0.0, 0.02))
        lo, hi = _RATIO_RANGES[pot.shape]
        ratio = rng.uniform(lo, hi)
        h = w / ratio
        conf = rng.uniform(0.6, 0.99)
        detections.append(
            Detection(BBox(cu - w / 2, cv - h / 2, cu + w / 2, cv + h / 2), pot.shape, conf)
        )
    if rng.random() < profile.fp_rate:
        fp = _spurious_detection(pots, rng, cal, frame_w, frame_h)
        if fp is not None:
            detections.append(fp)
    return detections


def _spurious_detection(pots, rng, cal, frame_w, frame_h, keepout_px=1200.0, attempts=100):
    """A plausible-looking false box, at least keepout_px from every true pot."""
    cls = CIRCULAR if rng.random() < 0.5 else RECTANGULAR
    lo, hi = _RATIO_RANGES[cls]
    ratio = rng.uniform(lo, hi)
    w = rng.uniform(600.0, 1400.0)
    h = w / ratio
    conf = rng.uniform(0.55, 0.95)
    centers = [arm_to_pixel(ArmTarget(p.x, p.y, cal.z_const), cal) for p in pots]
    for _ in range(attempts):
        cu = rng.uniform(w / 2 + 1, frame_w - w / 2 - 1)
        cv = rng.uniform(h / 2 + 1, frame_h - h / 2 - 1)
        if all(math.hypot(cu - u, cv - v) >= keepout_px for u, v in centers):
            return Detection(
                BBox(cu - w / 2, cv - h / 2, cu + w / 2, cv + h / 2), cls, conf
            )
    return None


# --------------------------------------------------------------------------
# IMU


def simulate_imu(true_tilt, t, noise_sigma, drift, rng):
    """One raw reading: truth plus gaussian noise plus the accumulated bias."""
    from irribot.leveling import ImuSample

    noise = rng.normal(0.0, noise_sigma) if noise_sigma > 0 else 0.0
    bias = drift.cumulative_error if drift is not None else 0.0
    return ImuSample(t=t, alpha_raw=true_tilt + noise + bias)


# --------------------------------------------------------------------------
# dispensing geometry


def _lens_area(r1, r2, d):
    """Overlap area of two disks with radii r1, r2 and center distance d."""
    if d >= r1 + r2:
        return 0.0
    if d <= abs(r1 - r2):
        rm = min(r1, r2)
        return math.pi * rm * rm
    # standard two-segment lens; clamp acos arguments against rounding
    a1 = math.acos(min(1.0, max(-1.0, (d * d + r1 * r1 - r2 * r2) / (2 * d * r1))))
    a2 = math.acos(min(1.0, max(-1.0, (d * d + r2 * r2 - r1 * r1) / (2 * d * r2))))
    tri = 0.5 * math.sqrt(
        max(0.0, (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2))
    )
    return r1 * r1 * a1 + r2 * r2 * a2 - tri


def _quadrant_area(u, v, r):
    """Area of the origin-centered disk of radius r inside [0,u] x [0,v], u,v >= 0."""
    u = min(u, r)
    v = min(v, r)
    if u <= 0 or v <= 0:
        return 0.0
    if u * u + v * v <= r * r:
        return u * v
    yu = math.sqrt(r * r - u * u)
    xv = math.sqrt(r * r - v * v)
    return 0.5 * (xv * v + u * yu) + 0.5 * r * r * (math.asin(u / r) - math.asin(xv / r))


def _signed_corner(x, y, r):
    s = (1.0 if x >= 0 else -1.0) * (1.0 if y >= 0 else -1.0)
    return s * _quadrant_area(abs(x), abs(y), r)


def _disk_rect_area(cx, cy, r, half_w, half_h):
    """Overlap of a disk at (cx, cy) with the origin-centered rect 2half_w x 2half_h.

    Signed inclusion-exclusion of the disk's corner integral over the rect
    bounds, translated so the disk sits at the origin.
    """
    ax, bx = -half_w - cx, half_w - cx
    ay, by = -half_h - cy, half_h - cy
    return (
        _signed_corner(bx, by, r)
        - _signed_corner(ax, by, r)
        - _signed_corner(bx, ay, r)
        + _signed_corner(ax, ay, r)
    )


def capture_fraction(pot, offset_x, offset_y, spray_radius):
    """Fraction of the spray disk landing inside the pot opening.

    The spray is a uniform disk centered at the impact point, offset from the
    pot center by (offset_x, offset_y) mm.
    """
    if spray_radius <= 0:
        raise ValueError("spray radius must be positive")
    spray_area = math.pi * spray_radius * spray_radius
    if pot.shape == CIRCULAR:
        d = math.hypot(offset_x, offset_y)
        overlap = _lens_area(spray_radius, pot.radius, d)
    else:
        overlap = _disk_rect_area(
            offset_x, offset_y, spray_radius, pot.width / 2.0, pot.height / 2.0
        )
    return min(1.0, max(0.0, overlap / spray_area))


@dataclass(frozen=True)
class PumpModel:
    flow_rate: float  # mL/s
    dispense_overshoot: float = 0.0  # ratio above target actually pumped
    spray_radius: float = 20.0  # mm
    spray_efficiency: float = 1.0  # captured fraction retained after drift/splash

    def __post_init__(self):
        if self.flow_rate <= 0:
            raise ValueError("flow rate must be positive")
        if self.dispense_overshoot < 0:
            raise ValueError("overshoot cannot be negative")
        if self.spray_radius <= 0:
            raise ValueError("spray radius must be positive")
        if not 0 < self.spray_efficiency <= 1:
            raise ValueError("spray efficiency must be in (0, 1]")


def dispense(pump, target_volume, positioning_error, pot, *, direction=(1.0, 0.0)):
    """Pump toward a pot with a known impact-point error.

    Returns (dispensed, delivered) in mL. The impact point sits
    positioning_error mm from the pot center along `direction`; delivered
    water is the dispensed volume scaled by the spray-disk capture fraction
    and the pump's retention efficiency.
    """
    if target_volume <= 0:
        raise ValueError("target volume must be positive")
    if positioning_error < 0:
        raise ValueError("positioning error cannot be negative")
    norm = math.hypot(*direction)
    if norm == 0:
        raise ValueError("direction must be a nonzero vector")
    dispensed = target_volume * (1.0 + pump.dispense_overshoot)
    frac = capture_fraction(
        pot,
        positioning_error * direction[0] / norm,
        positioning_error * direction[1] / norm,
        pump.spray_radius,
    )
    delivered = dispensed * frac * pump.spray_efficiency
    return dispensed, delivered


# --------------------------------------------------------------------------
# battery


@dataclass(frozen=True)
class BatteryModel:
    capacity_mah: float = 2400.0
    voltage_full: float = 12.6
    voltage_cutoff: float = 11.1
    drive_ma: float = 10824.0
    leveling_ma: float = 3416.0
    arm_ma: float = 1100.0
    pump_ma: float = 1400.0
    compute_ma: float = 900.0

    def __post_init__(self):
        if self.capacity_mah <= 0:
            raise ValueError("capacity must be positive")
        if self.voltage_cutoff >= self.voltage_full:
            raise ValueError("cutoff must be below full voltage")
        for name in ("drive_ma", "leveling_ma", "arm_ma", "pump_ma", "compute_ma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} cannot be negative")

    def draw(self, subsystem):
        try:
            return getattr(self, f"{subsystem}_ma")
        except AttributeError:
            raise ValueError(f"unknown subsystem {subsystem!r}") from None


@dataclass(frozen=True)
class BatteryState:
    model: BatteryModel
    charge_mah: float
    depleted: bool = False

    @property
    def voltage(self):
        m = self.model
        soc = self.charge_mah / m.capacity_mah
        return m.voltage_cutoff + (m.voltage_full - m.voltage_cutoff) * soc


def fresh_battery(model):
    return BatteryState(model=model, charge_mah=model.capacity_mah)


def battery_step(state, active_subsystems, dt):
    """Drain by the sum of active draws over dt seconds; depletion latches."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    draw = sum(state.model.draw(s) for s in active_subsystems)
    charge = state.charge_mah - draw * dt / 3600.0
    new = BatteryState(model=state.model, charge_mah=charge)
    return replace(new, depleted=state.depleted or new.voltage < state.model.voltage_cutoff)
