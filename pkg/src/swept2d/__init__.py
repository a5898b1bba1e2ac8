"""Swept-rule time stepping for 2D periodic stencil computations."""

from .components import downward_pyramid, latitudinal_bridge, longitudinal_bridge, upward_pyramid
from .engines import EngineReport, gather, run_classic, run_swept, serial_reference
from .errors import (CodecError, KernelContractError, NumericError, ProtocolError, SweptError, TransportError,
                     ValidationError)
from .grid import (Direction, GlobalField, Grid, Orientation, Panel, StencilProgram, Topology, init_grid,
                   make_topology, neighbor_of, panel_shape, scatter)
from .transport import InProcTransport, LatencyTransport, TcpTransport

__version__ = "0.1.0"

__all__ = [
    "CodecError", "Direction", "EngineReport", "GlobalField", "Grid", "InProcTransport", "KernelContractError",
    "LatencyTransport", "NumericError", "Orientation", "Panel", "ProtocolError", "StencilProgram", "SweptError",
    "TcpTransport", "Topology", "TransportError", "ValidationError", "downward_pyramid", "gather", "init_grid",
    "latitudinal_bridge", "longitudinal_bridge", "make_topology", "neighbor_of", "panel_shape", "run_classic",
    "run_swept", "scatter", "serial_reference", "upward_pyramid",
]
