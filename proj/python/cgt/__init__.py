"""Causally guided transformer anomaly detection: python surface.

The heavy lifting lives in the compiled ``_cgt`` extension; this package
re-exports it under a stable name.
"""

from _cgt import *  # noqa: F401,F403
from _cgt import __doc__  # noqa: F401
