"""Off-grid microgrid control: simulator, benchmark controllers, model-based RL."""

__version__ = "0.1.0"
