"""Time integrators for the ESFEM ODE system and their coefficient sets."""

from .coefficients import *  # noqa: F401,F403
from .coefficients import __all__ as _coef_all
from .steppers import *  # noqa: F401,F403
from .steppers import __all__ as _step_all

__all__ = list(_coef_all) + list(_step_all)
