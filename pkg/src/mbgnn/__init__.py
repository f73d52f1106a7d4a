"""Mini-batch graph neural networks on numpy.

Graph layers over top-k cosine neighborhoods induced inside each mini-batch,
a tape autodiff engine, robustness and attack benches, batch-aware GAN
discriminators and the NDB diversity score.
"""

__version__ = "0.1.0"
