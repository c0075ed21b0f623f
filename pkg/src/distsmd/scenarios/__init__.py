"""Concrete estimation scenarios: grid problems, localization and mapping."""
from .grid_problem import BernoulliSensors, GridProblem, two_agent_problem
from .localization import LocalizationScenario, build_localization
from .mapping import MappingScenario, build_mapping

__all__ = ["BernoulliSensors", "GridProblem", "two_agent_problem", "LocalizationScenario",
           "build_localization", "MappingScenario", "build_mapping"]
