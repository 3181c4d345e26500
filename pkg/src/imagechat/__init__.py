"""Image-grounded, style-conditioned dialogue: retrieval and generative
models, evaluation metrics, data tooling, HTTP serving, and a CLI."""

__version__ = "0.1.0"
