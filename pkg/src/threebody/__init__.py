"""Characterisation toolkit for three flux qubits with a 3-local coupling.

Modules:

* :mod:`~threebody.spin_model` -- diagonal Hamiltonian, energies, transitions
* :mod:`~threebody.estimator` -- linear inversion, complete subsets, selection error
* :mod:`~threebody.pulse_sim` -- synthetic Ramsey/Rabi data and unitary sequences
* :mod:`~threebody.fitters` -- fringe, Rabi and flux-noise fits
* :mod:`~threebody.protocol` -- simulate/fit/invert pipeline
* :mod:`~threebody.crosstalk` -- virtual device and flux-crosstalk calibration
* :mod:`~threebody.multimode` -- circuit models and effective-parameter extraction
"""
from .errors import DomainError
from .spin_model import BasisState, HamiltonianParams, TransitionId

__all__ = ["BasisState", "DomainError", "HamiltonianParams", "TransitionId"]
__version__ = "0.1.0"
