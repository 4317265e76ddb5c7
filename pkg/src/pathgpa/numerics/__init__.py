from . import autodiff
from .autodiff import Tape, Var, ShapeError, TapeStateError, forward, backward, finite_diff_check
from .linalg import sym_eig, fix_signs, EigenError
from .rng import make_rng, derive_seed
from .optim import Adam, glorot

__all__ = [
    "autodiff", "Tape", "Var", "ShapeError", "TapeStateError", "forward", "backward",
    "finite_diff_check", "sym_eig", "fix_signs", "EigenError", "make_rng", "derive_seed",
    "Adam", "glorot",
]
