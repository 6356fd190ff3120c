"""Great-circle helpers used for stop geofences and bounding boxes."""
import math

import numpy as np

EARTH_RADIUS_M = 6371000.0


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters between two WGS84 points."""
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = phi2 - phi1
    dlmb = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def haversine_array(lat, lon, lat0, lon0) -> np.ndarray:
    """Vectorized :func:`haversine_m`; arguments broadcast against each other."""
    phi1 = np.radians(np.asarray(lat, dtype=np.float64))
    phi2 = np.radians(np.asarray(lat0, dtype=np.float64))
    dphi = phi2 - phi1
    dlmb = np.radians(np.asarray(lon0, dtype=np.float64) - np.asarray(lon, dtype=np.float64))
    a = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(a)))


def destination(lat, lon, bearing_deg, distance_m):
    """Point reached by travelling ``distance_m`` along ``bearing_deg`` from (lat, lon)."""
    delta = distance_m / EARTH_RADIUS_M
    theta = math.radians(bearing_deg)
    phi1 = math.radians(lat)
    lmb1 = math.radians(lon)
    phi2 = math.asin(math.sin(phi1) * math.cos(delta) + math.cos(phi1) * math.sin(delta) * math.cos(theta))
    lmb2 = lmb1 + math.atan2(
        math.sin(theta) * math.sin(delta) * math.cos(phi1),
        math.cos(delta) - math.sin(phi1) * math.sin(phi2),
    )
    return math.degrees(phi2), math.degrees(lmb2)


def local_xy(lat, lon, lat0, lon0):
    """Equirectangular projection (meters) around (lat0, lon0).

    Only valid over a few hundred meters; used to intersect a GPS chord with a
    stop geofence.
    """
    x = math.radians(lon - lon0) * EARTH_RADIUS_M * math.cos(math.radians(lat0))
    y = math.radians(lat - lat0) * EARTH_RADIUS_M
    return x, y


def offset_latlon(lat, lon, meters):
    """Half-widths (dlat, dlon) in degrees of a ``meters`` pad around a latitude."""
    dlat = math.degrees(meters / EARTH_RADIUS_M)
    dlon = math.degrees(meters / (EARTH_RADIUS_M * math.cos(math.radians(lat))))
    return dlat, dlon
