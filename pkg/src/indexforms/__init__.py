"""Numerical workbench for eta forms, superconnection Chern forms and boundary-problem indices."""

__version__ = "0.1.0"
