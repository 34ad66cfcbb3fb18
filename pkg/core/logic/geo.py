"""
geo.py

Coordinate normalization and geodetic -> ECEF feature extraction.

Produces the 5 model input features per sample, in this fixed order:

    lat_norm, lon_norm, ux, uy, uz

The first two are the min-max normalized UE latitude/longitude, the last three
the unit vector pointing from the BS to the UE in ECEF. Checkpoints depend on
this order.

Altitudes are accepted in *meters* at the API boundary and converted to
kilometers internally (the WGS-84 semi-major axis below is in km). All math is
64-bit.
"""
from dataclasses import dataclass

import numpy

from .exceptions import DegenerateBounds, ZeroVector, DataValidationError, UsageError
from .utils import units

# -----------------------------------------------------------------------------
# WGS-84 constants

WGS84_A_KM = 6378.137
WGS84_E2 = 0.00669437999

METERS_TO_KM = (1 * units.meter).to(units.kilometer).magnitude

# |r| below this (km) is treated as coincident UE/BS
ZERO_VECTOR_TOL_KM = 1e-12

FEATURE_ORDER = ("lat_norm", "lon_norm", "ux", "uy", "uz")
FEATURE_SETS = {
    "combined": (0, 1, 2, 3, 4),
    "position": (0, 1),
    "unit_vector": (2, 3, 4),
}


# -----------------------------------------------------------------------------
# Types

@dataclass(frozen=True)
class GeodeticPosition:
    latitude_deg: float
    longitude_deg: float
    altitude_m: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.latitude_deg <= 90.0:
            raise DataValidationError("latitude out of range: {0}".format(self.latitude_deg))
        if not -180.0 <= self.longitude_deg <= 180.0:
            raise DataValidationError("longitude out of range: {0}".format(self.longitude_deg))


@dataclass(frozen=True)
class EcefVector:
    alpha_km: float
    beta_km: float
    gamma_km: float

    def as_array(self):
        return numpy.array([self.alpha_km, self.beta_km, self.gamma_km], dtype=numpy.float64)


@dataclass(frozen=True)
class NormalizationBounds:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not self.lat_min < self.lat_max:
            raise DegenerateBounds("latitude bounds are degenerate: [{0}, {1}]".format(self.lat_min, self.lat_max))
        if not self.lon_min < self.lon_max:
            raise DegenerateBounds("longitude bounds are degenerate: [{0}, {1}]".format(self.lon_min, self.lon_max))

    def to_dict(self):
        return {
            "lat_min": self.lat_min,
            "lat_max": self.lat_max,
            "lon_min": self.lon_min,
            "lon_max": self.lon_max,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["lat_min"]), float(d["lat_max"]), float(d["lon_min"]), float(d["lon_max"]))


@dataclass(frozen=True)
class FeatureVector:
    lat_norm: float
    lon_norm: float
    ux: float
    uy: float
    uz: float

    def as_array(self):
        return numpy.array([self.lat_norm, self.lon_norm, self.ux, self.uy, self.uz], dtype=numpy.float64)


# -----------------------------------------------------------------------------
# Normalization

def fit_bounds(samples):
    """elementwise min/max of latitude and longitude over a list of GeodeticPosition

    Raises DegenerateBounds for fewer than two samples or when either axis is constant.
    """
    if len(samples) < 2:
        raise DegenerateBounds("at least 2 positions are needed to fit bounds, got {0}".format(len(samples)))
    lats = numpy.array([p.latitude_deg for p in samples], dtype=numpy.float64)
    lons = numpy.array([p.longitude_deg for p in samples], dtype=numpy.float64)
    return NormalizationBounds(
        lat_min=float(lats.min()),
        lat_max=float(lats.max()),
        lon_min=float(lons.min()),
        lon_max=float(lons.max()),
    )


def normalize_arrays(lat, lon, bounds):
    lat = numpy.asarray(lat, dtype=numpy.float64)
    lon = numpy.asarray(lon, dtype=numpy.float64)
    lat_norm = (lat - bounds.lat_min) / (bounds.lat_max - bounds.lat_min)
    lon_norm = (lon - bounds.lon_min) / (bounds.lon_max - bounds.lon_min)
    return lat_norm, lon_norm


def normalize(pos, bounds):
    """min-max normalize a position's latitude and longitude.

    Positions outside the fitted bounds go through the same affine map and are
    not clamped.
    """
    lat_norm, lon_norm = normalize_arrays(pos.latitude_deg, pos.longitude_deg, bounds)
    return float(lat_norm), float(lon_norm)


# -----------------------------------------------------------------------------
# ECEF

def ecef_arrays(lat_deg, lon_deg, alt_m):
    """vectorised geodetic -> ECEF, returns an (..., 3) array in kilometers"""
    phi = numpy.radians(numpy.asarray(lat_deg, dtype=numpy.float64))
    lam = numpy.radians(numpy.asarray(lon_deg, dtype=numpy.float64))
    alt_km = numpy.asarray(alt_m, dtype=numpy.float64) * METERS_TO_KM

    sin_phi = numpy.sin(phi)
    cos_phi = numpy.cos(phi)
    # prime vertical radius of curvature
    r = WGS84_A_KM / numpy.sqrt(1.0 - WGS84_E2 * sin_phi * sin_phi)

    alpha = (r + alt_km) * cos_phi * numpy.cos(lam)
    beta = (r + alt_km) * cos_phi * numpy.sin(lam)
    gamma = ((1.0 - WGS84_E2) * r + alt_km) * sin_phi
    return numpy.stack([alpha, beta, gamma], axis=-1)


def geodetic_to_ecef(pos):
    a = ecef_arrays(pos.latitude_deg, pos.longitude_deg, pos.altitude_m)
    return EcefVector(float(a[0]), float(a[1]), float(a[2]))


def unit_vector_arrays(ue_ecef, bs_ecef):
    r = numpy.asarray(ue_ecef, dtype=numpy.float64) - numpy.asarray(bs_ecef, dtype=numpy.float64)
    norm = numpy.linalg.norm(r, axis=-1, keepdims=True)
    if numpy.any(norm < ZERO_VECTOR_TOL_KM):
        raise ZeroVector("UE and BS coincide in ECEF; the UE-BS direction is undefined")
    return r / norm


def ue_bs_unit_vector(ue, bs):
    """unit vector of the ECEF displacement from the BS to the UE.

    Altitudes are taken from the positions as given; callers building model
    features pass the UE at its flight height and the BS at 0 m.
    """
    u = unit_vector_arrays(geodetic_to_ecef(ue).as_array(), geodetic_to_ecef(bs).as_array())
    return float(u[0]), float(u[1]), float(u[2])


# -----------------------------------------------------------------------------
# Features

def make_feature(ue, bs, bounds):
    """concatenate [lat_norm, lon_norm, ux, uy, uz] for one UE/BS pair"""
    lat_norm, lon_norm = normalize(ue, bounds)
    ux, uy, uz = ue_bs_unit_vector(ue, bs)
    return FeatureVector(lat_norm, lon_norm, ux, uy, uz)


def feature_matrix(ue_lat, ue_lon, ue_alt_m, bs_lat, bs_lon, bs_alt_m, bounds):
    """vectorised make_feature over K samples -> K x 5 float64 array"""
    lat_norm, lon_norm = normalize_arrays(ue_lat, ue_lon, bounds)
    u = unit_vector_arrays(
        ecef_arrays(ue_lat, ue_lon, ue_alt_m),
        ecef_arrays(bs_lat, bs_lon, bs_alt_m),
    )
    return numpy.column_stack([lat_norm, lon_norm, u])


def feature_columns(feature_set):
    """column indices into the 5-wide feature rows for a named feature set"""
    try:
        return FEATURE_SETS[feature_set]
    except KeyError:
        raise UsageError(
            "unknown feature set '{0}' (choose from {1})".format(feature_set, ", ".join(sorted(FEATURE_SETS)))
        )
