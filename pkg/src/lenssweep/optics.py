"""Closed-form thin-lens optics.

Circle of confusion, the calibrated bokeh-strength scalar K, blur radius
from a disparity offset, depth-of-field bounds, and f-stop interpolation.

Unit convention: all formulas are evaluated in millimeters internally.
Distances cross the public interface in meters (matching EXIF usage) and
are converted exactly once at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

MM_PER_M = 1000.0


@dataclass(frozen=True)
class LensConfig:
    """Physical camera parameters feeding every optics formula."""

    focal_length_mm: float
    f_number: float
    focus_distance_m: float
    sensor_width_mm: float
    image_width_px: int
    image_height_px: int

    def __post_init__(self):
        if not self.focal_length_mm > 0:
            raise ValueError("focal_length_mm must be positive")
        if not self.f_number > 0:
            raise ValueError("f_number must be positive")
        if not self.sensor_width_mm > 0:
            raise ValueError("sensor_width_mm must be positive")
        if not self.focus_distance_m > 0:
            raise ValueError("focus_distance_m must be positive")
        if self.image_width_px < 1 or self.image_height_px < 1:
            raise ValueError("image dimensions must be positive integers")
        if self.focus_distance_m * MM_PER_M <= self.focal_length_mm:
            raise ValueError(
                "focus distance must exceed the focal length (S1 > f): "
                f"S1={self.focus_distance_m} m, f={self.focal_length_mm} mm"
            )

    @property
    def focus_distance_mm(self) -> float:
        return self.focus_distance_m * MM_PER_M


@dataclass(frozen=True)
class DofBounds:
    """Near/far in-focus limits in meters; far is +inf past the hyperfocal point."""

    near_m: float
    far_m: float

    def contains(self, distance_m: float) -> bool:
        return self.near_m <= distance_m <= self.far_m


def pixel_ratio(lens: LensConfig, reference_width_px: int = 512) -> float:
    """Sensor-millimeters to output-pixels conversion at a reference raster width."""
    if reference_width_px < 1:
        raise ValueError("reference_width_px must be >= 1")
    return reference_width_px / lens.sensor_width_mm


def coc_diameter_mm(lens: LensConfig, subject_distance_m: float) -> float:
    """Circle-of-confusion diameter on the sensor for a subject at S2 meters."""
    if not subject_distance_m > 0:
        raise ValueError("subject_distance_m must be positive")
    f = lens.focal_length_mm
    s1 = lens.focus_distance_mm
    s2 = subject_distance_m * MM_PER_M
    return (f * f) / (lens.f_number * (s1 - f)) * abs(s2 - s1) / s2


def bokeh_strength_k(lens: LensConfig, reference_width_px: int = 512) -> float:
    """Calibrated bokeh strength: blur radius in output pixels per unit
    inverse-depth offset.

    Unit chain: f, S1 in millimeters give f^2*S1 / (2*N*(S1-f)) in mm^2;
    multiplying by pixel_ratio (px/mm) yields px*mm, i.e. radius in pixels
    per unit |1/S1 - 1/S2| expressed per millimeter. For offsets per meter,
    divide the result by 1000.
    """
    f = lens.focal_length_mm
    s1 = lens.focus_distance_mm
    return (f * f * s1) / (2.0 * lens.f_number * (s1 - f)) * pixel_ratio(
        lens, reference_width_px
    )


def blur_radius_px(k: float, delta_disp: float) -> float:
    """Blur radius in pixels for a disparity offset, r = K * delta_disp."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    if delta_disp < 0:
        raise ValueError("delta_disp must be nonnegative")
    return k * delta_disp


def dof_bounds(lens: LensConfig, coc_limit_mm: float) -> DofBounds:
    """Near/far subject distances whose CoC equals the limit.

    Exact inversion of the thin-lens CoC: with C = f^2/(N*(S1-f)) the
    diameter at S2 is C*|S2-S1|/S2, so near = C*S1/(C+L) and
    far = C*S1/(C-L). The diameter approaches C as S2 grows, hence the
    far bound is +inf once L >= C (the hyperfocal condition).
    """
    if not coc_limit_mm > 0:
        raise ValueError("coc_limit_mm must be positive")
    f = lens.focal_length_mm
    s1 = lens.focus_distance_mm
    c = (f * f) / (lens.f_number * (s1 - f))
    near_mm = c * s1 / (c + coc_limit_mm)
    far_mm = c * s1 / (c - coc_limit_mm) if coc_limit_mm < c else math.inf
    return DofBounds(near_m=near_mm / MM_PER_M, far_m=far_mm / MM_PER_M)


def fstop_to_fnumber(normalized_fstop: float, n_min: float, n_max: float) -> float:
    """Map a normalized f-stop in [0, 1] to an f-number by logarithmic
    interpolation between the series endpoints. Endpoints map exactly."""
    if not 0.0 < n_min < n_max:
        raise ValueError("require 0 < n_min < n_max")
    t = normalized_fstop
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"normalized_fstop must lie in [0, 1], got {t}")
    if t == 0.0:
        return n_min
    if t == 1.0:
        return n_max
    return math.exp(math.log(n_min) + t * (math.log(n_max) - math.log(n_min)))
