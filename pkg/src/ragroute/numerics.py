"""Dense float64 numerics: stable nonlinearities and a gradient checker.

Vectors and matrices throughout the package are plain ``numpy.float64``
arrays (1-D and 2-D respectively). Everything here is a pure function of
its inputs; the gradient checker takes its probe stream seed explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import DegenerateEmbeddingError, NumericsError, ValidationError
from .rng import SplitMix64

ZERO_NORM_TOL = 1e-12


def as_vec(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValidationError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def cosine_sim(a, b) -> float:
    """Cosine similarity a.b / (|a| |b|).

    Raises DegenerateEmbeddingError on (near-)zero-norm inputs: a collapsed
    embedding must surface as an error, not as a silent score of 0.
    """
    a = as_vec(a)
    b = as_vec(b)
    if a.shape != b.shape:
        raise ValidationError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na <= ZERO_NORM_TOL or nb <= ZERO_NORM_TOL:
        raise DegenerateEmbeddingError(f"zero-norm input to cosine (norms {na:.3e}, {nb:.3e})")
    return float(np.dot(a, b) / (na * nb))


def log_sum_exp(xs) -> float:
    """log(sum(exp(x_i))) computed with a max shift; finite for finite input."""
    v = as_vec(xs)
    if v.size == 0:
        raise ValidationError("log_sum_exp of empty sequence")
    if not np.all(np.isfinite(v)):
        raise NumericsError("non-finite input to log_sum_exp")
    m = float(np.max(v))
    return m + math.log(float(np.sum(np.exp(v - m))))


def softmax(xs) -> np.ndarray:
    """Shift-stable softmax; output is non-negative and sums to 1."""
    v = as_vec(xs)
    if v.size == 0:
        raise ValidationError("softmax of empty sequence")
    out = np.exp(v - log_sum_exp(v))
    return out / float(np.sum(out))


def sigmoid(x: float) -> float:
    """Numerically stable logistic function."""
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass(frozen=True)
class GradCheckReport:
    """Result of a finite-difference check over one parameter set.

    param_name holds the parameter containing the worst relative error.
    """

    param_name: str
    max_abs_err: float
    max_rel_err: float
    num_probes: int

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol


def finite_diff_check(
    loss_fn: Callable[[Mapping[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    analytic_grad: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    probes: int = 20,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Probes `probes` coordinates chosen (seeded, size-weighted) across the
    whole parameter set. Relative error uses max(|fd|, |analytic|, 1e-8)
    as denominator. loss_fn must be deterministic.
    """
    if not (0.0 < eps <= 1e-2):
        raise ValidationError(f"eps must be in (0, 1e-2], got {eps}")
    if probes < 1:
        raise ValidationError("probes must be >= 1")
    names = sorted(params)
    if set(names) != set(analytic_grad):
        raise ValidationError("params and analytic_grad must share keys")
    sizes = [params[n].size for n in names]
    total = int(sum(sizes))
    if total == 0:
        raise ValidationError("empty parameter set")

    work = {n: np.array(params[n], dtype=np.float64, copy=True) for n in names}
    rng = SplitMix64(seed)
    max_abs = 0.0
    max_rel = 0.0
    worst = names[0]
    for _ in range(probes):
        flat = rng.below(total)
        for name, size in zip(names, sizes):
            if flat < size:
                break
            flat -= size
        theta = work[name].reshape(-1)
        orig = theta[flat]
        theta[flat] = orig + eps
        f_plus = float(loss_fn(work))
        theta[flat] = orig - eps
        f_minus = float(loss_fn(work))
        theta[flat] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NumericsError(f"non-finite loss while probing {name}[{flat}]")
        fd = (f_plus - f_minus) / (2.0 * eps)
        an = float(np.asarray(analytic_grad[name]).reshape(-1)[flat])
        abs_err = abs(fd - an)
        rel_err = abs_err / max(abs(fd), abs(an), 1e-8)
        max_abs = max(max_abs, abs_err)
        if rel_err > max_rel:
            max_rel = rel_err
            worst = name
    return GradCheckReport(param_name=worst, max_abs_err=max_abs, max_rel_err=max_rel, num_probes=probes)
