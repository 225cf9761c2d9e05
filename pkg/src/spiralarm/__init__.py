"""Design studio, quasi-static simulator, and grasp controller for
cable-driven log-spiral arms."""

__version__ = "0.1.0"
