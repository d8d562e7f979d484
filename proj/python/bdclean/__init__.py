"""Training-set poisoning and cleansing toolkit (C++ core)."""

try:
    from ._bdclean import *  # noqa: F401,F403  (installed package layout)
except ImportError:
    from _bdclean import *  # noqa: F401,F403  (in-tree build on PYTHONPATH)
