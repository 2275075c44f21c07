"""Render figures from wtcsim experiment CSV files.

Read-only consumer of the documented row schema; computes nothing itself.
"""

from .render import (
    FIGURE_KINDS,
    SCHEMA_COLUMNS,
    SCHEMA_VERSION,
    PlotSpec,
    SchemaError,
    load_rows,
    render,
    render_figure,
)

__all__ = [
    "FIGURE_KINDS",
    "SCHEMA_COLUMNS",
    "SCHEMA_VERSION",
    "PlotSpec",
    "SchemaError",
    "load_rows",
    "render",
    "render_figure",
]

__version__ = "0.1.0"
