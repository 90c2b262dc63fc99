"""Closed-form neural tangent kernels of soft tree ensembles, with a finite-ensemble simulator."""

from .kernels import *  # noqa: F401,F403
from .kernels import __all__ as _k
from .topology import *  # noqa: F401,F403
from .topology import __all__ as _t
from .ensemble import *  # noqa: F401,F403
from .ensemble import __all__ as _e
from .linearized import *  # noqa: F401,F403
from .linearized import __all__ as _l
from .data import *  # noqa: F401,F403
from .data import __all__ as _d

__version__ = "0.1.0"
__all__ = [*_k, *_t, *_e, *_l, *_d]
