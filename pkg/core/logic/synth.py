"""
synth.py

Synthetic UAV scenario generator with a geometric beam oracle.

Trajectories are flown through randomly drawn waypoints inside the BS's
served sector at a per-sequence speed and height, sampled at 1 Hz. Each
sample's beam label and relative power vector come from the geometric oracle:
the bearing from the BS is placed within M equal azimuth bins and every beam's
power falls off as a Gaussian in angle around its bin center.

Output is a RawDataset in exactly the shape ingested data takes, so synthetic
and real data share every downstream code path.
"""
import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy

from .exceptions import OutOfSector, UsageError
from .geo import GeodeticPosition
from .split import RawDataset, RawSample
from .utils import derive_rng, msg, units, STREAM_SYNTH

# spherical mean Earth radius used for trajectory geometry
EARTH_RADIUS_M = (6371.0088 * units.kilometer).to(units.meter).magnitude

# exp() of anything below this underflows to zero in float64
_MAX_EXPONENT = 700.0


@dataclass(frozen=True)
class ScenarioConfig:
    bs_pos: GeodeticPosition = field(default_factory=lambda: GeodeticPosition(33.4199, -111.9290, 0.0))
    M: int = 32
    sector: Tuple[float, float] = (-60.0, 60.0)
    n_sequences: int = 20
    seq_len: int = 60
    speed_mps: Tuple[float, float] = (4.0, 16.0)
    height_m: Tuple[float, float] = (20.0, 120.0)
    range_m: Tuple[float, float] = (150.0, 500.0)
    jitter_m: float = 2.0
    seed: int = 0
    kappa: float = 0.15
    noise_floor: float = 0.01
    drift: bool = False
    drift_span: float = 0.35

    def __post_init__(self):
        if not self.sector[0] < self.sector[1]:
            raise UsageError("sector start must be below sector end, got {0}".format(self.sector))
        if self.sector[1] - self.sector[0] > 360.0:
            raise UsageError("sector cannot exceed 360 degrees")
        if self.M < 2:
            raise UsageError("codebook size M must be >= 2")
        if self.kappa <= 0:
            raise UsageError("power decay kappa must be positive")
        if self.noise_floor < 0:
            raise UsageError("noise floor must be non-negative")
        if self.n_sequences < 1 or self.seq_len < 1:
            raise UsageError("need at least one sequence of at least one sample")
        for name in ("speed_mps", "height_m", "range_m"):
            lo, hi = getattr(self, name)
            if lo < 0 or lo > hi:
                raise UsageError("{0} must be an ordered non-negative range, got {1}".format(name, (lo, hi)))
        if self.range_m[0] <= 0:
            raise UsageError("minimum range must be positive (the UE may not sit on the BS)")
        if not 0 < self.drift_span <= 1:
            raise UsageError("drift_span must lie in (0, 1]")

    @property
    def bin_width_deg(self):
        return (self.sector[1] - self.sector[0]) / self.M

    def to_dict(self):
        return {
            "bs_lat": self.bs_pos.latitude_deg,
            "bs_lon": self.bs_pos.longitude_deg,
            "M": self.M,
            "sector": list(self.sector),
            "n_sequences": self.n_sequences,
            "seq_len": self.seq_len,
            "speed_mps": list(self.speed_mps),
            "height_m": list(self.height_m),
            "range_m": list(self.range_m),
            "jitter_m": self.jitter_m,
            "seed": self.seed,
            "kappa": self.kappa,
            "noise_floor": self.noise_floor,
            "drift": self.drift,
            "drift_span": self.drift_span,
        }


# -----------------------------------------------------------------------------
# Spherical helpers

def bearing_deg(origin, target):
    """initial great-circle bearing from origin to target, degrees clockwise
    from north in (-180, 180]"""
    phi1 = math.radians(origin.latitude_deg)
    phi2 = math.radians(target.latitude_deg)
    dlam = math.radians(target.longitude_deg - origin.longitude_deg)
    y = math.sin(dlam) * math.cos(phi2)
    x = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlam)
    return math.degrees(math.atan2(y, x))


def destination(origin, bearing, distance_m, altitude_m=0.0):
    """point reached from origin along an initial bearing after distance_m on the sphere"""
    delta = distance_m / EARTH_RADIUS_M
    theta = math.radians(bearing)
    phi1 = math.radians(origin.latitude_deg)
    lam1 = math.radians(origin.longitude_deg)
    phi2 = math.asin(math.sin(phi1) * math.cos(delta) + math.cos(phi1) * math.sin(delta) * math.cos(theta))
    lam2 = lam1 + math.atan2(
        math.sin(theta) * math.sin(delta) * math.cos(phi1),
        math.cos(delta) - math.sin(phi1) * math.sin(phi2),
    )
    lon = (math.degrees(lam2) + 540.0) % 360.0 - 180.0
    return GeodeticPosition(math.degrees(phi2), lon, altitude_m)


def _sector_offset(theta, cfg):
    """bearing measured from the sector start, in [0, 360); round-off just below
    the start maps to 0"""
    offset = (theta - cfg.sector[0]) % 360.0
    if offset > 360.0 - 1e-7:
        return 0.0
    return offset


# -----------------------------------------------------------------------------
# Oracle

def beam_powers(offset_deg, cfg):
    """relative power per beam for a bearing offset_deg past the sector start"""
    x = offset_deg / cfg.bin_width_deg
    d = x - (numpy.arange(cfg.M, dtype=numpy.float64) + 0.5)
    return numpy.exp(-numpy.minimum(cfg.kappa * d * d, _MAX_EXPONENT)) + cfg.noise_floor


def geometric_beam_oracle(ue, cfg):
    """(beam, powers) for a UE position.

    The beam is the azimuth bin holding the BS->UE bearing; a bearing exactly
    on an inner bin edge belongs to the lower bin, which is also what
    argmax(powers) with lowest-index ties yields.
    """
    theta = bearing_deg(cfg.bs_pos, ue)
    offset = _sector_offset(theta, cfg)
    width = cfg.sector[1] - cfg.sector[0]
    if offset > width + 1e-9:
        raise OutOfSector("bearing {0:.6f} deg lies outside sector {1}".format(theta, cfg.sector))
    offset = min(offset, width)
    powers = beam_powers(offset, cfg)
    return int(numpy.argmax(powers)), powers


# -----------------------------------------------------------------------------
# Trajectories

def _arc_for_sequence(q, cfg):
    lo, hi = cfg.sector
    if not cfg.drift:
        return lo, hi
    span = (hi - lo) * cfg.drift_span
    progress = q / (cfg.n_sequences - 1) if cfg.n_sequences > 1 else 0.0
    start = lo + (hi - lo - span) * progress
    return start, start + span


def _draw_waypoint(rng, arc, cfg):
    r = rng.uniform(*cfg.range_m)
    theta = rng.uniform(*arc)
    if cfg.jitter_m > 0:
        r += rng.normal(0.0, cfg.jitter_m)
        theta += math.degrees(rng.normal(0.0, cfg.jitter_m) / max(r, 1.0))
    r = min(max(r, cfg.range_m[0]), cfg.range_m[1])
    theta = min(max(theta, arc[0]), arc[1])
    return r, theta


def _xy(r, theta):
    """local east/north offset (m) of a polar waypoint"""
    t = math.radians(theta)
    return numpy.array([r * math.sin(t), r * math.cos(t)])


def _polar(xy):
    return float(math.hypot(xy[0], xy[1])), math.degrees(math.atan2(xy[0], xy[1]))


def trajectory(q, cfg):
    """polar (range m, bearing deg) positions of sequence q, one per 1 Hz tick,
    plus its speed and height.

    The UE flies straight east/north chords between waypoints, so consecutive
    ticks sit `speed` meters apart except where a tick spans a waypoint turn.
    """
    rng = derive_rng(cfg.seed, STREAM_SYNTH, q)
    speed = rng.uniform(*cfg.speed_mps)
    height = rng.uniform(*cfg.height_m)
    arc = _arc_for_sequence(q, cfg)

    needed = speed * (cfg.seq_len - 1)
    r, last_theta = _draw_waypoint(rng, arc, cfg)
    waypoints = [_xy(r, last_theta)]
    lengths = []
    # segments shorter than a meter are dropped; the cap only guards degenerate configs
    for _ in range(100000):
        if sum(lengths) >= needed and lengths:
            break
        r, theta = _draw_waypoint(rng, arc, cfg)
        # a chord spanning 180 degrees or more could leave a wide sector
        if abs(theta - last_theta) >= 180.0:
            continue
        nxt = _xy(r, theta)
        seg = float(numpy.linalg.norm(nxt - waypoints[-1]))
        if seg < 1.0:
            continue
        waypoints.append(nxt)
        lengths.append(seg)
        last_theta = theta

    cum = numpy.concatenate([[0.0], numpy.cumsum(lengths)]) if lengths else numpy.zeros(1)
    track = []
    for k in range(cfg.seq_len):
        s = speed * k
        if len(waypoints) == 1:
            track.append(_polar(waypoints[0]))
            continue
        i = int(min(numpy.searchsorted(cum, s, side="right") - 1, len(lengths) - 1))
        f = min(max((s - cum[i]) / lengths[i], 0.0), 1.0)
        track.append(_polar(waypoints[i] + f * (waypoints[i + 1] - waypoints[i])))
    return track, speed, height


def generate(cfg):
    """a RawDataset of cfg.n_sequences trajectories of cfg.seq_len samples"""
    samples = []
    bs = GeodeticPosition(cfg.bs_pos.latitude_deg, cfg.bs_pos.longitude_deg, 0.0)
    for q in range(cfg.n_sequences):
        track, speed, height = trajectory(q, cfg)
        for t, (r, theta) in enumerate(track):
            ue = destination(bs, theta, r, altitude_m=height)
            beam, powers = geometric_beam_oracle(ue, cfg)
            samples.append(RawSample(q, t, bs, ue, height, beam, tuple(float(p) for p in powers)))
    msg("generated {0} sequences x {1} samples (M={2}, seed={3})".format(cfg.n_sequences, cfg.seq_len, cfg.M, cfg.seed))
    return RawDataset(samples, cfg.M)
