"""Hypergraph condensation with heat-kernel diffusion, anchor-guided
hyperedge generation and a dual-level discrimination objective."""

__version__ = "0.1.0"
