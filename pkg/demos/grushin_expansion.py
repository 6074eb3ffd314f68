"""First-order term of the small-time expansion on perturbed Grushin.

Two routes to the eps^1 coefficient at the origin diagonal:

1. fit a polynomial in eps to rescaled kernel values on a sign-symmetric
   eps grid, and read off c1;
2. compute the Duhamel integral int_0^t exp((t-s)L) A1 exp(sL) ds, with A1 the
   first-order perturbation operator, and evaluate its kernel.

Both should vanish at the origin: the odd coefficients of the expansion
are zero on the diagonal at the base point. Takes about half a minute.
"""

from srheat import load_corpus
from srheat.checks import run_check

spec = load_corpus("grushin_pert")
for name in ("expansion", "duhamel"):
    r = run_check(name, spec)
    print(f"{name:>9}: {'PASS' if r.passed else 'FAIL'}  {r.reason}")
