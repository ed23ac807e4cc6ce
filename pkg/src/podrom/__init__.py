"""POD reduced-order modeling of 2D semilinear reaction-diffusion systems
with BDF-q time stepping (q = 1..5)."""

__version__ = "0.1.0"
