"""lenssweep: calibrated thin-lens bokeh rendering, synthetic benchmark
generation, and per-pixel depth recovery from bokeh-strength sweeps."""

__version__ = "0.1.0"

from .optics import (  # noqa: F401
    DofBounds,
    LensConfig,
    blur_radius_px,
    bokeh_strength_k,
    coc_diameter_mm,
    dof_bounds,
    fstop_to_fnumber,
    pixel_ratio,
)
from .raster import DisparityMap, RasterImage  # noqa: F401
from .renderer import BokehStack, RenderParams, pillbox_kernel, render_bokeh, render_stack  # noqa: F401
from .scene import LayeredScene, PlanarDisparity, composite_scene, sample_background_plane  # noqa: F401
