"""Variational Monte Carlo dynamics for spin-1/2 systems.

Explicit (tVMC) and projected (p-tVMC) variational time evolution with the
full estimator stack (forces, quantum geometric tensor, bias terms,
infidelity with control variates and importance sampling, Renyi-2 entropy),
a measurement protocol, and a dense state-vector oracle for validation.
"""

__version__ = "0.1.0"
