"""Leveled CKKS backend (RLWE ciphertexts) with the slot-engine interface."""

from .backend import CkksBackend, CkksKeySet, CkksParams, Encoder
from .ntt import negacyclic_mul, schoolbook_mul

__all__ = ["CkksBackend", "CkksKeySet", "CkksParams", "Encoder", "negacyclic_mul",
           "schoolbook_mul"]
