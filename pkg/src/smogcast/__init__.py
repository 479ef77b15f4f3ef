"""smogcast: two-station pollutant forecasting with hand-derived gradients.

Subpackages follow the pipeline: ingest -> pipeline -> models (on neuro)
-> train / search -> evaluation, with cli wiring them end to end.
"""

__version__ = "0.1.0"

from .neuro import backend

__all__ = ["backend", "__version__"]
