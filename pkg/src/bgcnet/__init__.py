"""Traffic forecasting with a Bayesian graph structure.

The pipeline: ingest road distances and traffic series, learn node
embeddings from the observed topology, infer a constant symmetric
adjacency by minimizing a smoothness + log-barrier + Frobenius
objective, and feed the result (plus a learnable adjacency sampled via
Monte Carlo dropout) into a gated temporal-convolution backbone.
"""

from bgcnet.errors import (
    BgcnetError,
    DataError,
    DegenerateInputError,
    DivergenceError,
    ShapeError,
)

__version__ = "0.1.0"

__all__ = [
    "BgcnetError",
    "DataError",
    "DegenerateInputError",
    "DivergenceError",
    "ShapeError",
    "__version__",
]
