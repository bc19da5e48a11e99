"""stochlab: a numerical laboratory for diffusion-based quantum models.

Subpackages
-----------
numkit      self-contained numerical kernel (Hermitian eigensolver, Haar
            unitaries, fixed-step matrix integration, reproducible RNG streams)
diffusion   generalized Brownian ensembles, drift estimation, action estimators
waveengine  1-D wave equation and real diffusion-pair solvers plus field calculus
emergent    density-weighted operator matrices, commutators, operator flows
tracedyn    matrix phase-space dynamics built from trace polynomials
hiddenvars  hidden-vector sampling, polychotomic selection, Born statistics
cli         experiment runner with machine-readable summaries
"""

__version__ = "0.1.0"
