"""
bundlechoice

Estimation, testing and sharp-set checks for panel multinomial choice models
with bundles of two goods.
"""

__version__ = "0.1.0"

from .models import Choice, Good, ObservationPanel, Theta  # noqa: E402

__all__ = ["Choice", "Good", "ObservationPanel", "Theta", "__version__"]
