"""Joint semantic transfer for multi-source heterogeneous domain adaptation
in intrusion detection: a numpy autodiff engine, the transfer model and
its losses, pseudo-label refinement, training and evaluation harnesses."""

__version__ = "0.1.0"
