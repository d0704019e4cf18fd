"""Batch figure renderer for completed model-run directories.

Consumes only the documented output files of the modelling CLI (chain,
prediction, assessment, raster and config files); it never imports the
modelling package or modifies the run directory.
"""

from .render import PLOT_KINDS, render

__version__ = "0.1.0"

__all__ = ["PLOT_KINDS", "render", "__version__"]
