"""Prospective land-cover modelling on dated categorical rasters.

Three predictors share one feature and evaluation layer: a Markov chain with
multi-criteria suitability and contiguity-filtered allocation, a one-hidden-layer
perceptron, and a penalized multinomial logit.
"""

__version__ = "0.1.0"

from .errors import (AlignmentError, ConfigError, ConvergenceError, DataError, EmptySelectionError,
                     GridParseError, LandProspectError, SeparationError)
from .raster import (CategoricalRaster, Category, ContinuousRaster, Legend, ScenarioBundle, align_check,
                     default_legend, load_grid, load_legend, save_grid, save_legend)

__all__ = [
    "AlignmentError", "CategoricalRaster", "Category", "ConfigError", "ContinuousRaster",
    "ConvergenceError", "DataError", "EmptySelectionError", "GridParseError", "LandProspectError",
    "Legend", "ScenarioBundle", "SeparationError", "align_check", "default_legend", "load_grid",
    "load_legend", "save_grid", "save_legend",
]
