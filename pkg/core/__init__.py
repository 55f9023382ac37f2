"""Core library for sequence-flexible knowledge tracing.

Data pipeline (data, sequences, dataset, cache), the numpy autodiff engine,
both encoders, the network, training and evaluation.
"""

__version__ = "0.1.0"
