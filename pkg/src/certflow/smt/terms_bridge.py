"""Re-exports of the term layer for the SMT backend (keeps the emitter and
driver importable without reaching into the sym package path)."""
from ..sym.terms import Arena, BOOL, REAL, Term, atoms_of, to_sexpr  # noqa: F401
