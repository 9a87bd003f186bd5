"""Closed-form scalar functions of (x, y) given as expression text."""

import numpy as np
import sympy

_X, _Y = sympy.symbols("x y", real=True)


class ClosedForm:
    """Vectorized function parsed from text such as ``"1 + x*y"``."""

    def __init__(self, text):
        self.text = str(text).strip()
        try:
            expr = sympy.sympify(self.text, locals={"x": _X, "y": _Y, "pi": sympy.pi})
        except (sympy.SympifyError, SyntaxError, TypeError) as exc:
            raise ValueError(f"cannot parse expression {self.text!r}: {exc}") from None
        extra = expr.free_symbols - {_X, _Y}
        if extra:
            raise ValueError(f"expression {self.text!r} uses unknown symbols {sorted(map(str, extra))}")
        self.expr = expr
        self._f = sympy.lambdify((_X, _Y), expr, modules="numpy")

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = self._f(x, y)
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(x, y).shape).copy()

    def at(self, points):
        pts = np.asarray(points, dtype=float)
        return self(pts[..., 0], pts[..., 1])

    def min_on_grid(self, n=201):
        t = np.linspace(0.0, 1.0, n)
        xx, yy = np.meshgrid(t, t, indexing="ij")
        return float(self(xx, yy).min())

    @property
    def is_zero(self):
        return self.expr == 0

    def __repr__(self):
        return f"ClosedForm({self.text!r})"

    def __eq__(self, other):
        return isinstance(other, ClosedForm) and self.text == other.text

    def __hash__(self):
        return hash(self.text)


def as_function(f):
    if isinstance(f, (ClosedForm, _Wrapped)):
        return f
    if callable(f):
        return _Wrapped(f)
    return ClosedForm(f)


class _Wrapped:
    def __init__(self, f):
        self._f = f

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.broadcast_to(np.asarray(self._f(x, y), dtype=float), np.broadcast(x, y).shape).copy()

    def at(self, points):
        pts = np.asarray(points, dtype=float)
        return self(pts[..., 0], pts[..., 1])
