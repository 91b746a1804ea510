# Bath noise synthesis, spectral density estimation and ensemble propagation
__version__ = "0.1.0"
