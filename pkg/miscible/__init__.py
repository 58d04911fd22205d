"""Characteristics-mixed finite elements for miscible displacement in porous media."""
from miscible.errors import MiscibleError
from miscible.scheme import RunConfig, TimeState, init, postprocess, run, step

__all__ = ["MiscibleError", "RunConfig", "TimeState", "init", "postprocess", "run", "step"]
