#!/usr/bin/env python3
"""
Exception hierarchy for the AdaPEFT toolkit
Each error carries the process exit code main.py reports for it
"""


class AdaPeftError(Exception):
    """Base class for every toolkit failure"""

    exit_code = 1


class ConfigError(AdaPeftError):
    """Invalid run config, unknown preset or bad command-line value"""

    exit_code = 2


class TraceFormatError(AdaPeftError):
    """Malformed or empty .ppitrace content"""

    exit_code = 2


class FitFailureError(AdaPeftError):
    """Probe design matrix is singular, no quadratic can be recovered"""


class ContractViolationError(AdaPeftError):
    """An operation was called outside its precondition"""


class SolverGuardError(AdaPeftError):
    """Instance too large for the requested exact solver"""

    exit_code = 3


class TableSizeError(SolverGuardError):
    """DP table would not fit in the configured number of cells"""


class CompatibilityError(AdaPeftError):
    """Two models (or a model and a trace) disagree on group names"""

    exit_code = 4
