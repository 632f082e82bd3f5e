"""Physics-informed operator learning for steady chip thermal simulation,
with a finite-difference reference solver."""
from .config import ChipConfig, Convection, Dirichlet, Geometry, Mesh, Neumann, PowerMap, SlabPower, adiabatic
from .fdm import TemperatureField, assemble, solve, solve_config
from .operator import ModelSpec, OperatorModel, init_model, load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "ChipConfig", "Convection", "Dirichlet", "Geometry", "Mesh", "Neumann", "PowerMap", "SlabPower", "adiabatic",
    "TemperatureField", "assemble", "solve", "solve_config",
    "ModelSpec", "OperatorModel", "init_model", "load_model", "save_model",
]
