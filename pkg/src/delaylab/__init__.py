"""Delay-coordinate predictability experiments.

Modules:
    systems      -- dynamical systems and samplers for their invariant measures
    observables  -- perturbed observables, delay maps, observation matrices
    dimension    -- neighbour index and dimension estimators
    prediction   -- prediction-error functionals and exceedance scans
    slices       -- geometric slices, injectivity and pushforward diagnostics
    harness      -- scenario registry, results, reporting (CLI in ``delaylab.cli``)
"""

__version__ = "0.1.0"
