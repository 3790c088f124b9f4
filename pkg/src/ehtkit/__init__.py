"""Desk-scale toolkit for preparing XXZ-chain states, simulating Pauli-basis
measurements with a calibrated error channel, and learning entanglement
Hamiltonians of subsystems by least-squares tomography."""

__version__ = "0.1.0"
