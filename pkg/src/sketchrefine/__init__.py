"""sketchrefine: geometry and structure refinement for figure sketches."""

__version__ = "0.1.0"
