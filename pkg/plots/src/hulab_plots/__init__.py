"""Figure rendering for hulab CSV outputs."""

from hulab_plots.render import FigureInputError, FigureSpec, render

__version__ = "0.1.0"

__all__ = ["FigureSpec", "FigureInputError", "render", "__version__"]
