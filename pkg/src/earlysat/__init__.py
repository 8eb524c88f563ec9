"""Early-warning learner satisfaction forecasting from behavioral event
sequences, cached text embeddings, and topic features, with calibrated
predictive uncertainty and a leakage-safe evaluation protocol.
"""

__version__ = "0.1.0"
