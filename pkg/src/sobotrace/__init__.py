"""Screened fractional seminorms and trace lifts on strip-like domains.

The library computes screened fractional Sobolev seminorms, builds moment
mollifiers and the boundary-data lifting operators based on them, verifies
the trace inequalities and Fourier multiplier bounds with explicit constants,
runs the counterexample experiments that separate the screened spaces from
the classical homogeneous ones, and solves the associated variational
problems.  The ``sobotrace`` command line exposes every experiment and writes
delimited reports with rendered figures next to them.
"""

__version__ = "0.1.0"
