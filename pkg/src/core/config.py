"""
Configuration module for the congestion toolkit.

This module provides the SolverConfig class for managing solver settings.
"""
import json
import logging
import os

logger = logging.getLogger("congestion.config")

DUAL_METHODS = ("quasi_newton", "lbfgs", "agd")


class SolverConfig:
    """
    Configuration class for managing solver settings.

    This class stores the tolerances and iteration limits shared by the
    solvers, the decomposition and the command line, and provides methods
    for loading and saving settings to a JSON file.
    """

    def __init__(self, config_file=None):
        """
        Initialize the configuration with default values.

        Args:
            config_file (str, optional): Path to a configuration file to load.
                If None, default configuration is used.
        """
        # Dual solver settings
        self.tolerance = 1e-8
        self.max_iters = 500
        self.dual_method = "quasi_newton"
        self.fallback_method = "agd"
        self.fallback_share = 0.2
        self.curvature_floor = 1e-8
        self.refinements = 3

        # Feasibility projection
        self.feasibility_tolerance = 1e-10
        self.cg_max_iters = 10000

        # Decomposition thresholds, relative to max|f|
        self.decompose_eps = 1e-10
        self.zero_flux_ratio = 1e-12

        # Output settings
        self.debug_mode = False
        self.render_scale = 8

        if config_file and os.path.exists(config_file):
            self.load(config_file)

    def load(self, config_file):
        """
        Load configuration from a file.

        Args:
            config_file (str): Path to the configuration file.

        Returns:
            bool: True if the configuration was loaded successfully, False otherwise.
        """
        try:
            with open(config_file, 'r') as f:
                config_data = json.load(f)

            for key, value in config_data.items():
                if hasattr(self, key):
                    setattr(self, key, value)
                else:
                    logger.warning(f"Ignoring unknown configuration key '{key}'")

            return True
        except (IOError, json.JSONDecodeError) as e:
            logger.error(f"Error loading configuration: {e}")
            return False

    def save(self, config_file):
        """
        Save configuration to a file.

        Args:
            config_file (str): Path to the configuration file.

        Returns:
            bool: True if the configuration was saved successfully, False otherwise.
        """
        try:
            config_data = {key: value for key, value in self.__dict__.items()}

            with open(config_file, 'w') as f:
                json.dump(config_data, f, indent=4)

            return True
        except IOError as e:
            logger.error(f"Error saving configuration: {e}")
            return False

    def override(self, **values):
        """
        Replace settings with explicitly given values.

        None values are skipped so unset command line flags keep the
        file or default value.

        Returns:
            SolverConfig: self, for chaining.
        """
        for key, value in values.items():
            if value is None:
                continue
            if not hasattr(self, key):
                raise AttributeError(f"Unknown configuration key '{key}'")
            setattr(self, key, value)
        return self
