"""Typechecker and interpreter for a contextual modal calculus of algebraic
effects and deep parametrized handlers."""

__version__ = "0.1.0"
