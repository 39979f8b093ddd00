"""Exception hierarchy shared by every package."""


class TwoWeightError(Exception):
    """Base class for all errors raised by this project."""


class GridError(TwoWeightError, ValueError):
    """Invalid dyadic interval arithmetic: scale overflow or broken containment."""


class MeasureError(TwoWeightError, ValueError):
    """Malformed atomic measure, common atoms, or evaluation at an atom."""


class HaarError(TwoWeightError, ValueError):
    """Haar function requested on a degenerate interval."""


class AdmissibilityError(TwoWeightError, ValueError):
    """A pair collection breaks admissibility or a lemma hypothesis."""


class DecompositionError(TwoWeightError, RuntimeError):
    """The size lemma could not assign a pair or the recursion did not shrink."""


class InputError(TwoWeightError, ValueError):
    """Malformed input file or command line value."""


class InvariantError(TwoWeightError, AssertionError):
    """A verification check failed."""
