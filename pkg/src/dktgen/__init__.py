"""Deep knowledge tracing with training data augmented by a mixed-type tabular diffusion model."""

__version__ = "0.1.0"
