"""Desk-scale laboratory comparing imitation from observation (GAIfO) with
imitation from demonstration (GAIL) on Euler-Lagrange robot systems."""

__version__ = "0.1.0"
