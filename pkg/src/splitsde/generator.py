"""Itô-generator expansions of conditional expectations.

For a diffusion with polynomial drift and constant diffusion, the generator
``L g = F·∇g + ½ tr(ΣΣᵀ ∇²g)`` maps polynomials to polynomials, and

    E[g(X_h) | X_0 = x] = Σ_{j ≤ J} h^j / j! (L^j g)(x) + O(h^{J+1})

for smooth ``g``. This gives a deterministic reference for one-step moments
that Monte Carlo cannot resolve (the quantities of interest are O(h³) while
sampling noise is O(√h / √M)).

Functions are represented exactly as :class:`TrigPoly`: finite sums of
``x^α cos(w·x)^m sin(w·x)^n`` for one fixed frequency vector ``w``. That
class is closed under the generator and covers the Lorenz inverse flow, whose
rotation angle is linear in the first coordinate.
"""

from __future__ import annotations

from collections import defaultdict
from math import factorial

import numpy as np

from .errors import ContractViolation


class TrigPoly:
    """Sparse sum of ``c · x^α C^m S^n`` with ``C = cos(w·x)``, ``S = sin(w·x)``.

    Parameters
    ----------
    terms : dict
        Maps exponent tuples ``(α_1, ..., α_d, m, n)`` to coefficients.
    dim : int
    freq : array_like, shape (d,), optional
        Frequency vector ``w``; zero when omitted.
    """

    def __init__(self, terms, dim, freq=None):
        self.dim = int(dim)
        self.freq = np.zeros(self.dim) if freq is None else np.asarray(freq, dtype=float)
        self.terms = {k: float(v) for k, v in terms.items() if v != 0.0}

    # construction helpers
    @classmethod
    def const(cls, value, dim, freq=None):
        return cls({(0,) * (dim + 2): value}, dim, freq)

    @classmethod
    def var(cls, i, dim, freq=None):
        e = [0] * (dim + 2)
        e[i] = 1
        return cls({tuple(e): 1.0}, dim, freq)

    @classmethod
    def cos(cls, dim, freq):
        return cls({(0,) * dim + (1, 0): 1.0}, dim, freq)

    @classmethod
    def sin(cls, dim, freq):
        return cls({(0,) * dim + (0, 1): 1.0}, dim, freq)

    def _like(self, terms):
        return TrigPoly(terms, self.dim, self.freq)

    def _coerce(self, other):
        if isinstance(other, TrigPoly):
            if other.dim != self.dim:
                raise ContractViolation("dimension mismatch between TrigPoly operands")
            if np.any(other.freq != self.freq) and other.has_trig() and self.has_trig():
                raise ContractViolation("TrigPoly operands use different frequencies")
            return other
        return TrigPoly.const(float(other), self.dim, self.freq)

    def has_trig(self):
        return any(k[-2] or k[-1] for k in self.terms)

    def _freq_for(self, other):
        return self.freq if self.has_trig() or not other.has_trig() else other.freq

    def __add__(self, other):
        other = self._coerce(other)
        out = defaultdict(float, self.terms)
        for k, v in other.terms.items():
            out[k] += v
        return TrigPoly(out, self.dim, self._freq_for(other))

    __radd__ = __add__

    def __neg__(self):
        return self._like({k: -v for k, v in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, TrigPoly):
            return self._like({k: v * float(other) for k, v in self.terms.items()})
        other = self._coerce(other)
        out = defaultdict(float)
        for k1, v1 in self.terms.items():
            for k2, v2 in other.terms.items():
                out[tuple(a + b for a, b in zip(k1, k2))] += v1 * v2
        return TrigPoly(out, self.dim, self._freq_for(other))

    __rmul__ = __mul__

    def diff(self, i):
        """Partial derivative with respect to ``x_i``."""
        out = defaultdict(float)
        w = self.freq[i]
        for k, v in self.terms.items():
            if k[i]:
                e = list(k)
                e[i] -= 1
                out[tuple(e)] += v * k[i]
            if w != 0.0:
                m, n = k[-2], k[-1]
                # d/dx_i C^m S^n = w (-m C^{m-1} S^{n+1} + n C^{m+1} S^{n-1})
                if m:
                    e = list(k)
                    e[-2] -= 1
                    e[-1] += 1
                    out[tuple(e)] -= v * w * m
                if n:
                    e = list(k)
                    e[-2] += 1
                    e[-1] -= 1
                    out[tuple(e)] += v * w * n
        return self._like(out)

    def __call__(self, x):
        """Evaluate at points ``x`` of shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ContractViolation(f"expected points of dimension {self.dim}")
        phase = x @ self.freq
        C, S = np.cos(phase), np.sin(phase)
        out = np.zeros(x.shape[:-1])
        for k, v in self.terms.items():
            t = v * C ** k[-2] * S ** k[-1]
            for i in range(self.dim):
                if k[i]:
                    t = t * x[..., i] ** k[i]
            out = out + t
        return out

    def __len__(self):
        return len(self.terms)


def generator(g: TrigPoly, drift, SS) -> TrigPoly:
    """Apply ``L g = Σ_i F_i ∂_i g + ½ Σ_ij (ΣΣᵀ)_ij ∂_i ∂_j g``."""
    SS = np.asarray(SS, dtype=float)
    d = g.dim
    grads = [g.diff(i) for i in range(d)]
    out = TrigPoly({}, d, g.freq)
    for i in range(d):
        if grads[i].terms:
            out = out + drift[i] * grads[i]
    for i in range(d):
        for j in range(d):
            if SS[i, j] != 0.0 and grads[i].terms:
                out = out + grads[i].diff(j) * (0.5 * SS[i, j])
    return out


def generator_powers(g: TrigPoly, drift, SS, order):
    """``[g, L g, L² g, ..., L^order g]``."""
    out = [g]
    for _ in range(order):
        out.append(generator(out[-1], drift, SS))
    return out


def expectation_series(g: TrigPoly, drift, SS, x, h, order=10):
    """Truncated generator series for ``E[g(X_h) | X_0 = x]``.

    Parameters
    ----------
    g : TrigPoly
    drift : sequence of TrigPoly
        Drift components (polynomials).
    SS : array_like, shape (d, d)
        ``ΣΣᵀ``.
    x : array_like, shape (..., d)
    h : float or array_like
        Broadcast against the leading shape of ``x``.
    order : int
        Highest generator power kept.
    """
    h = np.asarray(h, dtype=float)
    total = 0.0
    for j, Lg in enumerate(generator_powers(g, drift, SS, order)):
        total = total + h ** j / factorial(j) * Lg(x)
    return total


def polynomial_drift(model, beta):
    """Drift components of a model as TrigPolys, when the model provides them."""
    fn = getattr(model, "drift_polynomials", None)
    if fn is None:
        raise ContractViolation(f"model {model.name!r} does not expose a polynomial drift")
    return fn(beta)
