"""Model interaction kernels and interaction-weight functions.

A model kernel is a nonnegative continuous function K(w1, w2, w3) on the
closed octant, homogeneous of some degree and symmetric in its first two
arguments.  Four parametric families are provided:

* ``product``   K = (w1*w2*w3)**(lam/3)
* ``sum``       K = (w1**lam + w2**lam + w3**lam) / 3
* ``mixed``     K = (w1**p * w2**q * w3**r + w1**q * w2**p * w3**r) / 2
* ``const``     K = c

Every family is expressible as a short sum of rank-one (separable) terms
``coef * w1**e1 * w2**e2 * w3**e3``; the fast grid evaluators in
:mod:`fourwave.collision` and :mod:`fourwave.solver` rely on that
decomposition.  Continuity on the octant holds by construction for all
nonnegative exponents and is not machine-checked.

The structural hypotheses the rest of the package relies on (symmetry,
homogeneity, sub-multiplicative domination by a weight function) each have
a sampling-based checker returning a small report with the worst witness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Kernel",
    "WeightFunction",
    "CheckReport",
    "KernelSpecError",
    "parse_kernel",
    "parse_weight",
    "check_symmetry",
    "check_homogeneity",
    "check_submultiplicative",
]

_FAMILIES = ("product", "sum", "mixed", "const")


class KernelSpecError(ValueError):
    """Raised for malformed or out-of-range kernel/weight specifications."""


def _pow(base, exponent: float):
    """base**exponent with the convention 0**0 = 1.

    Keeps kernel evaluation total on the closed octant: exponent-zero
    factors degenerate to the constant 1 instead of producing NaN at 0.
    """
    if exponent == 0.0:
        return np.ones_like(np.asarray(base, dtype=float))
    return np.asarray(base, dtype=float) ** exponent


@dataclass(frozen=True)
class Kernel:
    """Immutable descriptor of one model kernel.

    ``params`` holds the family parameters: ``lam`` for product/sum,
    ``p, q, r`` for mixed, ``c`` for const.  Instances are pure value
    objects, safe to share across threads.
    """

    family: str
    params: tuple

    @property
    def degree(self) -> float:
        """Homogeneity degree: K(s*w) = s**degree * K(w) for s > 0."""
        if self.family == "product" or self.family == "sum":
            return self.params[0]
        if self.family == "mixed":
            return sum(self.params)
        return 0.0

    def rank_one_terms(self) -> list[tuple[float, tuple[float, float, float]]]:
        """Decomposition K = sum of coef * w1**e1 * w2**e2 * w3**e3 terms."""
        if self.family == "product":
            (lam,) = self.params
            e = lam / 3.0
            return [(1.0, (e, e, e))]
        if self.family == "sum":
            (lam,) = self.params
            return [
                (1.0 / 3.0, (lam, 0.0, 0.0)),
                (1.0 / 3.0, (0.0, lam, 0.0)),
                (1.0 / 3.0, (0.0, 0.0, lam)),
            ]
        if self.family == "mixed":
            p, q, r = self.params
            return [(0.5, (p, q, r)), (0.5, (q, p, r))]
        (c,) = self.params
        return [(c, (0.0, 0.0, 0.0))]

    def eval(self, w1, w2, w3):
        """Evaluate K; accepts scalars or broadcastable numpy arrays.

        Total on the closed octant and never negative or NaN there.
        """
        out = 0.0
        for coef, (e1, e2, e3) in self.rank_one_terms():
            out = out + coef * _pow(w1, e1) * _pow(w2, e2) * _pow(w3, e3)
        return out

    def __call__(self, w1, w2, w3):
        return self.eval(w1, w2, w3)

    def spec_string(self) -> str:
        if self.family == "product":
            return f"product:lambda={self.params[0]:g}"
        if self.family == "sum":
            return f"sum:lambda={self.params[0]:g}"
        if self.family == "mixed":
            p, q, r = self.params
            return f"mixed:p={p:g},q={q:g},r={r:g}"
        return f"const:c={self.params[0]:g}"


@dataclass(frozen=True)
class WeightFunction:
    """Interaction weight used for domination bounds and thinning majorants.

    ``affine`` is phi(w) = w + 1 (so phi >= 1 and phi is exactly conserved
    by the interaction, since particle count and total frequency are).
    ``fractional`` is phi(w) = w**(1-gamma) for gamma in (0,1); it vanishes
    at 0, so zero-frequency atoms are inert under fractional majorants.
    """

    variant: str
    gamma: float = 0.0

    def __call__(self, w):
        if self.variant == "affine":
            return np.asarray(w, dtype=float) + 1.0
        return _pow(w, 1.0 - self.gamma)

    @property
    def is_affine(self) -> bool:
        return self.variant == "affine"

    def spec_string(self) -> str:
        if self.variant == "affine":
            return "affine"
        return f"fractional:gamma={self.gamma:g}"


AFFINE = WeightFunction("affine")


@dataclass
class CheckReport:
    """Outcome of a structural hypothesis check over a sample set."""

    name: str
    passed: bool
    worst_residual: float
    witness: tuple | None

    def __str__(self) -> str:
        state = "pass" if self.passed else "FAIL"
        where = ""
        if self.witness is not None:
            pretty = ", ".join(f"{float(v):.6g}" for v in self.witness)
            where = f" worst at ({pretty})"
        return f"{self.name}: {state} (worst residual {self.worst_residual:.3e}{where})"


def _as_eval(kernel) -> Callable:
    return kernel.eval if hasattr(kernel, "eval") else kernel


def check_symmetry(kernel, samples: Sequence[tuple]) -> CheckReport:
    """Check K(a,b,c) == K(b,a,c) on the given triples.

    Passes iff the residual is below 1e-12 relative to 1 + |K(a,b,c)| on
    every sample.  ``kernel`` may be a :class:`Kernel` or a bare callable.
    """
    if len(samples) == 0:
        raise ValueError("samples must be nonempty")
    kv = _as_eval(kernel)
    worst, witness = 0.0, None
    for a, b, c in samples:
        ref = kv(a, b, c)
        res = abs(ref - kv(b, a, c)) / (1.0 + abs(ref))
        if res > worst:
            worst, witness = res, (a, b, c)
    return CheckReport("symmetry", worst <= 1e-12, worst, witness)


def check_homogeneity(kernel, samples: Sequence[tuple], scales: Sequence[float],
                      degree: float | None = None) -> CheckReport:
    """Check K(s*w) == s**degree * K(w) for every sample/scale pair."""
    if len(samples) == 0:
        raise ValueError("samples must be nonempty")
    if any(s <= 0 for s in scales):
        raise ValueError("scales must be strictly positive")
    kv = _as_eval(kernel)
    deg = kernel.degree if degree is None else degree
    worst, witness = 0.0, None
    for a, b, c in samples:
        base = kv(a, b, c)
        for s in scales:
            scaled = s ** deg
            res = abs(kv(s * a, s * b, s * c) - scaled * base) / (scaled * (1.0 + base))
            if res > worst:
                worst, witness = res, (a, b, c, s)
    return CheckReport("homogeneity", worst <= 1e-10, worst, witness)


def check_submultiplicative(kernel, weight: WeightFunction,
                            samples: Sequence[tuple]) -> CheckReport:
    """Check K(w1,w2,w3) <= phi(w1)*phi(w2)*phi(w3) on the samples.

    The report's residual is the worst ratio K / (phi*phi*phi); a ratio up
    to 1 + 1e-12 is accepted so that exactly-tight kernels pass.
    """
    if len(samples) == 0:
        raise ValueError("samples must be nonempty")
    kv = _as_eval(kernel)
    worst, witness = 0.0, None
    for a, b, c in samples:
        bound = float(weight(a)) * float(weight(b)) * float(weight(c))
        val = float(kv(a, b, c))
        if bound == 0.0:
            ratio = 0.0 if val == 0.0 else math.inf
        else:
            ratio = val / bound
        if ratio > worst:
            worst, witness = ratio, (a, b, c)
    return CheckReport("sub-multiplicative", worst <= 1.0 + 1e-12, worst, witness)


def _parse_fields(text: str, spec: str) -> dict[str, float]:
    fields: dict[str, float] = {}
    if not text:
        return fields
    for part in text.split(","):
        if "=" not in part:
            raise KernelSpecError(f"malformed field {part!r} in {spec!r} (expected name=value)")
        name, _, raw = part.partition("=")
        name = name.strip()
        try:
            fields[name] = float(raw)
        except ValueError:
            raise KernelSpecError(f"field {name!r} in {spec!r}: {raw!r} is not a number") from None
    return fields


def _require(fields: dict, names: Iterable[str], spec: str) -> list[float]:
    names = list(names)
    unknown = set(fields) - set(names)
    if unknown:
        raise KernelSpecError(f"unknown field {sorted(unknown)[0]!r} in {spec!r}")
    vals = []
    for name in names:
        if name not in fields:
            raise KernelSpecError(f"missing field {name!r} in {spec!r}")
        vals.append(fields[name])
    return vals


def parse_kernel(spec: str) -> Kernel:
    """Parse a kernel specification like ``product:lambda=1``.

    Negative exponents are rejected: kernels must not blow up at zero
    frequency.  Raises :class:`KernelSpecError` naming the offending field.
    """
    family, _, rest = spec.strip().partition(":")
    family = family.strip().lower()
    if family not in _FAMILIES:
        raise KernelSpecError(f"unknown kernel family {family!r} (expected one of {_FAMILIES})")
    fields = _parse_fields(rest.strip(), spec)
    if family in ("product", "sum"):
        (lam,) = _require(fields, ["lambda"], spec)
        if lam < 0:
            raise KernelSpecError(f"field 'lambda' in {spec!r} must be >= 0, got {lam:g}")
        return Kernel(family, (lam,))
    if family == "mixed":
        p, q, r = _require(fields, ["p", "q", "r"], spec)
        for name, v in (("p", p), ("q", q), ("r", r)):
            if v < 0:
                raise KernelSpecError(f"field {name!r} in {spec!r} must be >= 0, got {v:g}")
        return Kernel("mixed", (p, q, r))
    (c,) = _require(fields, ["c"], spec)
    if c < 0:
        raise KernelSpecError(f"field 'c' in {spec!r} must be >= 0, got {c:g}")
    return Kernel("const", (c,))


def parse_weight(spec: str) -> WeightFunction:
    """Parse a weight specification: ``affine`` or ``fractional:gamma=0.5``."""
    variant, _, rest = spec.strip().partition(":")
    variant = variant.strip().lower()
    if variant == "affine":
        if rest.strip():
            raise KernelSpecError(f"weight 'affine' takes no fields, got {rest!r}")
        return AFFINE
    if variant == "fractional":
        (gamma,) = _require(_parse_fields(rest.strip(), spec), ["gamma"], spec)
        if not 0.0 < gamma < 1.0:
            raise KernelSpecError(f"field 'gamma' in {spec!r} must lie in (0,1), got {gamma:g}")
        return WeightFunction("fractional", gamma)
    raise KernelSpecError(f"unknown weight function {variant!r} (expected affine or fractional)")
