"""Planning toolkit for a robot guiding a person on a leash that can go slack."""

from .dynamics import Mode, Variant
from .errors import LeashGuideError
from .geometry import Configuration, LeashParams

__version__ = "0.1.0"

__all__ = ["Configuration", "LeashParams", "LeashGuideError", "Mode", "Variant", "__version__"]
