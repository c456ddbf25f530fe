"""Text expressions for the metric g(u) and the nonlinearity F(u, grad u).

Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := number | 'i' | var | func '(' expr ')' | '(' expr ')' | '-' factor
    var    := 'u' [digit]
    func   := 'conj' | 'real' | 'imag' | 'abs2' | 'dx' digit

``dxK(uA)`` is the leaf for the spatial derivative of component A along axis
K; its argument must be a plain variable.  The Unicode minus sign is accepted
wherever '-' is.  Expressions are polynomial or rational in u, conj(u) and
grad u, which is enough for every model nonlinearity shipped as a preset.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import LexError, ParseError, SingularityError, ValidationError
from .field_core import GridSpec, SpaceTimeField, SpatialField, dealias, derivative_array

__all__ = [
    "Token",
    "Const",
    "Var",
    "Unary",
    "Binary",
    "ExprNode",
    "tokenize",
    "parse",
    "parse_expr",
    "unparse",
    "evaluate",
    "evaluate_pointwise",
    "directional_derivative",
    "variables",
    "MetricSpec",
    "NonlinearitySpec",
    "Failure",
    "ValidationReport",
    "validate",
    "METRIC_PRESETS",
    "NONLINEARITY_PRESETS",
    "metric_preset",
    "nonlinearity_preset",
]

SING_TOL = 1e-14
FUNCS = ("conj", "real", "imag", "abs2")


# ---------------------------------------------------------------------------
# tokens


@dataclass(frozen=True)
class Token:
    kind: str  # num | i | var | func | dx | op | lparen | rparen | comma | end
    text: str
    offset: int
    value: Union[float, int, tuple, None] = None

    def __repr__(self):
        if self.kind == "num":
            return f"num {self.value!r}"
        return self.text


_NUM = re.compile(r"(\d+\.?\d*|\.\d+)([eE][+\-−]?\d+)?")
_IDENT = re.compile(r"[A-Za-z][A-Za-z0-9]*")
_SINGLE = {"+": "op", "-": "op", "−": "op", "*": "op", "/": "op", "(": "lparen", ")": "rparen", ",": "comma"}


def tokenize(src: str) -> list[Token]:
    """Split ``src`` into tokens; offsets are UTF-8 byte offsets."""
    out: list[Token] = []
    pos = 0
    byte = 0
    n = len(src)
    while pos < n:
        ch = src[pos]
        if ch.isspace():
            byte += len(ch.encode())
            pos += 1
            continue
        if ch in _SINGLE:
            text = "-" if ch == "−" else ch
            out.append(Token(_SINGLE[ch], text, byte))
            byte += len(ch.encode())
            pos += 1
            continue
        m = _NUM.match(src, pos)
        if m and (ch.isdigit() or ch == "."):
            text = m.group(0)
            out.append(Token("num", text, byte, float(text.replace("−", "-"))))
            byte += len(text.encode())
            pos = m.end()
            continue
        m = _IDENT.match(src, pos)
        if m:
            out.append(_ident_token(m.group(0), byte))
            byte += len(m.group(0))
            pos = m.end()
            continue
        raise LexError(f"unexpected character {ch!r}", byte)
    return out


def _ident_token(word: str, byte: int) -> Token:
    if word == "i":
        return Token("i", word, byte)
    if word in FUNCS:
        return Token("func", word, byte)
    m = re.fullmatch(r"dx([1-9])", word)
    if m:
        return Token("dx", word, byte, int(m.group(1)))
    m = re.fullmatch(r"([uw])([1-9]?)", word)
    if m:
        comp = int(m.group(2)) if m.group(2) else 1
        return Token("var", word, byte, (m.group(1), comp))
    raise LexError(f"unknown identifier {word!r}", byte)


# ---------------------------------------------------------------------------
# trees


@dataclass(frozen=True)
class Const:
    value: complex


@dataclass(frozen=True)
class Var:
    """Component ``comp`` (1-based) of ``name``; ``axis`` > 0 means its derivative."""

    name: str = "u"
    comp: int = 1
    axis: int = 0


@dataclass(frozen=True)
class Unary:
    op: str  # conj | real | imag | abs2 | neg
    arg: "ExprNode"


@dataclass(frozen=True)
class Binary:
    op: str  # + - * /
    left: "ExprNode"
    right: "ExprNode"


ExprNode = Union[Const, Var, Unary, Binary]


class _Parser:
    def __init__(self, tokens: Sequence[Token]):
        self.toks = list(tokens)
        if not self.toks or self.toks[-1].kind != "end":
            end = self.toks[-1].offset + len(self.toks[-1].text) if self.toks else 0
            self.toks.append(Token("end", "", end))
        self.i = 0

    def peek(self) -> Token:
        return self.toks[self.i]

    def take(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, kind: str, what: str) -> Token:
        t = self.peek()
        if t.kind != kind:
            if t.kind == "end" and kind == "rparen":
                raise ParseError("unbalanced parenthesis: expected ')'", t.offset)
            raise ParseError(f"expected {what}, got {t.text or 'end of input'!r}", t.offset)
        return self.take()

    def expr(self) -> ExprNode:
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.take().text
            node = Binary(op, node, self.term())
        return node

    def term(self) -> ExprNode:
        node = self.factor()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.take().text
            node = Binary(op, node, self.factor())
        return node

    def factor(self) -> ExprNode:
        t = self.take()
        if t.kind == "num":
            return Const(complex(t.value))
        if t.kind == "i":
            return Const(1j)
        if t.kind == "var":
            name, comp = t.value
            return Var(name, comp, 0)
        if t.kind == "op" and t.text == "-":
            return Unary("neg", self.factor())
        if t.kind == "lparen":
            node = self.expr()
            self.expect("rparen", "')'")
            return node
        if t.kind == "func":
            self.expect("lparen", "'('")
            node = self.expr()
            self.expect("rparen", "')'")
            return Unary(t.text, node)
        if t.kind == "dx":
            self.expect("lparen", "'('")
            v = self.expect("var", "a variable inside dx")
            self.expect("rparen", "')'")
            name, comp = v.value
            return Var(name, comp, t.value)
        if t.kind == "end":
            raise ParseError("unexpected end of input", t.offset)
        raise ParseError(f"unexpected token {t.text!r}", t.offset)


def parse(tokens: Union[str, Sequence[Token]]) -> ExprNode:
    if isinstance(tokens, str):
        tokens = tokenize(tokens)
    p = _Parser(tokens)
    node = p.expr()
    t = p.peek()
    if t.kind == "rparen":
        raise ParseError("unbalanced parenthesis: unmatched ')'", t.offset)
    if t.kind != "end":
        raise ParseError(f"unexpected token {t.text!r}", t.offset)
    return node


parse_expr = parse

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _num(x: float) -> str:
    return repr(float(x))


def unparse(e: ExprNode, _prec: int = 0) -> str:
    """Text with minimal parentheses; ``parse(unparse(e)) == e`` for parsed trees."""
    if isinstance(e, Const):
        c = complex(e.value)
        if c.imag == 0 and c.real >= 0 and not np.signbit(c.real):
            return _num(c.real)
        if c == 1j:
            return "i"
        if c.real == 0 and c.imag > 0:
            s = f"{_num(c.imag)}*i"
            return s if _prec <= 2 else f"({s})"
        s = f"{_num(c.real)}" if c.imag == 0 else f"{_num(c.real)}+{_num(c.imag)}*i"
        return f"({s})"
    if isinstance(e, Var):
        base = e.name if e.comp == 1 and e.name == "u" else f"{e.name}{e.comp}"
        return f"dx{e.axis}({base})" if e.axis else base
    if isinstance(e, Unary):
        if e.op == "neg":
            return "-" + unparse(e.arg, 3)
        return f"{e.op}({unparse(e.arg)})"
    p = _PREC[e.op]
    left = unparse(e.left, p)
    right = unparse(e.right, p + 1)
    s = f"{left}{e.op}{right}"
    return f"({s})" if p < _prec else s


def variables(e: ExprNode) -> set[Var]:
    if isinstance(e, Var):
        return {e}
    if isinstance(e, Unary):
        return variables(e.arg)
    if isinstance(e, Binary):
        return variables(e.left) | variables(e.right)
    return set()


# ---------------------------------------------------------------------------
# evaluation

Leaf = Callable[[Var], np.ndarray]


def _eval(e: ExprNode, leaf: Leaf):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return leaf(e)
    if isinstance(e, Unary):
        a = _eval(e.arg, leaf)
        if e.op == "neg":
            return -a
        if e.op == "conj":
            return np.conj(a)
        if e.op == "real":
            return np.real(a) + 0j
        if e.op == "imag":
            return np.imag(a) + 0j
        if e.op == "abs2":
            return (np.real(a) ** 2 + np.imag(a) ** 2) + 0j
        raise ValidationError(f"unknown unary {e.op!r}")
    a = _eval(e.left, leaf)
    b = _eval(e.right, leaf)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "/":
        bad = np.abs(b) < SING_TOL
        if np.any(bad):
            loc = tuple(int(i) for i in np.argwhere(np.atleast_1d(bad))[0])
            raise SingularityError(f"denominator {unparse(e.right)!r} vanishes", loc)
        return a / b
    raise ValidationError(f"unknown binary {e.op!r}")


def _leaf_from_arrays(u: np.ndarray, du: Optional[np.ndarray], w=None, dw=None, comp_axis: int = 0) -> Leaf:
    """Leaves from raw arrays; ``du[l-1]`` holds the axis-l derivative of ``u``."""

    def pick(arr, c):
        return np.take(arr, c - 1, axis=comp_axis)

    def leaf(v: Var):
        src, dsrc = (u, du) if v.name == "u" else (w, dw)
        if src is None:
            raise ValidationError(f"expression references {v.name} but no values were supplied")
        if v.comp > src.shape[comp_axis]:
            raise ValidationError(f"component {v.name}{v.comp} out of range")
        if v.axis == 0:
            return pick(src, v.comp)
        if dsrc is None:
            raise ValidationError("expression references a derivative but no gradient was supplied")
        if v.axis > len(dsrc):
            raise ValidationError(f"derivative axis {v.axis} out of range")
        return pick(dsrc[v.axis - 1], v.comp)

    return leaf


def evaluate_pointwise(e: ExprNode, u: np.ndarray, du=None, w=None, dw=None, comp_axis: int = 0) -> np.ndarray:
    """Plain pointwise evaluation on raw arrays, no dealiasing."""
    shape = np.take(u, 0, axis=comp_axis).shape
    out = _eval(e, _leaf_from_arrays(u, du, w, dw, comp_axis))
    return np.broadcast_to(np.asarray(out, dtype=complex), shape).copy()


def _gradient_arrays(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.stack([derivative_array(values, grid, k, 1) for k in range(1, grid.d + 1)])


def evaluate(e: ExprNode, u, du=None, w=None, dw=None):
    """Pointwise composition followed by the dealiasing projection.

    ``u`` is a SpatialField or SpaceTimeField; ``du`` (a sequence of d fields
    or an array) is computed spectrally when the tree needs it and none is
    given.  Returns a one-component field of the same kind as ``u``.
    """
    grid = u.grid
    comp_axis = 0 if isinstance(u, SpatialField) else 1
    uses = variables(e)
    need_du = any(v.axis and v.name == "u" for v in uses)
    need_dw = any(v.axis and v.name == "w" for v in uses)
    du_arr = _as_grad(du, u, grid, need_du)
    w_arr = None if w is None else w.values
    dw_arr = _as_grad(dw, w, grid, need_dw) if w is not None else None
    raw = evaluate_pointwise(e, u.values, du_arr, w_arr, dw_arr, comp_axis)
    out = dealias(raw, grid)
    return u.with_values(np.expand_dims(out, comp_axis))


def _as_grad(du, u, grid, needed):
    if du is None:
        return _gradient_arrays(u.values, grid) if needed else None
    if isinstance(du, np.ndarray):
        return du
    return np.stack([f.values for f in du])


# ---------------------------------------------------------------------------
# directional derivative


def directional_derivative(e: ExprNode) -> ExprNode:
    """d/de e(u + e w, grad u + e grad w) at e = 0, as a tree in u and w.

    Every ``u`` leaf maps to the matching ``w`` leaf; conj, real and imag are
    real-linear so they commute with the derivative.
    """
    if isinstance(e, Const):
        return Const(0j)
    if isinstance(e, Var):
        return Var("w", e.comp, e.axis) if e.name == "u" else Const(0j)
    if isinstance(e, Unary):
        da = directional_derivative(e.arg)
        if e.op in ("neg", "conj", "real", "imag"):
            return Unary(e.op, da)
        if e.op == "abs2":
            return Unary("real", Binary("*", Const(2.0 + 0j), Binary("*", Unary("conj", e.arg), da)))
    a, b = e.left, e.right
    da, db = directional_derivative(a), directional_derivative(b)
    if e.op in "+-":
        return Binary(e.op, da, db)
    if e.op == "*":
        return Binary("+", Binary("*", da, b), Binary("*", a, db))
    if e.op == "/":
        num = Binary("-", Binary("*", da, b), Binary("*", a, db))
        return Binary("/", num, Binary("*", b, b))
    raise ValidationError(f"cannot differentiate {e!r}")


# ---------------------------------------------------------------------------
# specs and validation


def _as_tree(x) -> ExprNode:
    return parse(x) if isinstance(x, str) else x


@dataclass(frozen=True)
class MetricSpec:
    """d x d entries in u only."""

    entries: tuple

    @classmethod
    def from_strings(cls, rows: Sequence[Sequence[Union[str, ExprNode]]]) -> "MetricSpec":
        return cls(tuple(tuple(_as_tree(x) for x in row) for row in rows))

    @property
    def d(self) -> int:
        return len(self.entries)

    def source(self) -> list[list[str]]:
        return [[unparse(x) for x in row] for row in self.entries]

    def evaluate(self, u) -> np.ndarray:
        """Real array (d, d, ...) of dealiased entries on ``u``'s grid."""
        axis = 1 if isinstance(u, SpaceTimeField) else 0
        return np.array([[np.take(evaluate(x, u).values.real, 0, axis=axis) for x in row] for row in self.entries])


@dataclass(frozen=True)
class NonlinearitySpec:
    """m component expressions in u and grad u."""

    components: tuple

    @classmethod
    def from_strings(cls, comps: Sequence[Union[str, ExprNode]]) -> "NonlinearitySpec":
        return cls(tuple(_as_tree(x) for x in comps))

    @property
    def m(self) -> int:
        return len(self.components)

    def source(self) -> list[str]:
        return [unparse(x) for x in self.components]

    def evaluate(self, u, du=None):
        parts = [evaluate(c, u, du) for c in self.components]
        axis = 0 if isinstance(u, SpatialField) else 1
        return u.with_values(np.concatenate([p.values for p in parts], axis=axis))


@dataclass(frozen=True)
class Failure:
    entry: str
    condition: str
    detail: str


@dataclass
class ValidationReport:
    kind: str
    failures: list = field(default_factory=list)
    measurements: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def raise_if_failed(self):
        if self.failures:
            f = self.failures[0]
            raise ValidationError(f"{self.kind} entry {f.entry} fails {f.condition}: {f.detail}")


def _probe_grid(d: int) -> GridSpec:
    return GridSpec(d=d, N=32, L=8.0, M=2)


def _probe_fields(grid: GridSpec, m: int, count: int, seed: int) -> list[np.ndarray]:
    """Smooth random complex probes of unit-ish amplitude."""
    rng = np.random.default_rng(seed)
    out = []
    k = grid.kabs()
    damp = np.exp(-((k / 2.0) ** 2))
    for _ in range(count):
        z = rng.standard_normal((m, *grid.shape)) + 1j * rng.standard_normal((m, *grid.shape))
        v = np.fft.ifftn(np.fft.fftn(z, axes=tuple(range(1, grid.d + 1))) * damp, axes=tuple(range(1, grid.d + 1)))
        v /= np.abs(v).max()
        out.append(v)
    return out


def validate(spec: Union[MetricSpec, NonlinearitySpec], m: int = 1, d: Optional[int] = None, seed: int = 0) -> ValidationReport:
    """Check g(0) = I, realness and symmetry, or F(0) = 0 and quadratic vanishing."""
    if isinstance(spec, MetricSpec):
        return _validate_metric(spec, m, seed)
    if isinstance(spec, NonlinearitySpec):
        return _validate_nonlinearity(spec, d or 1, seed)
    raise ValidationError("validate takes a MetricSpec or NonlinearitySpec")


def _check_vars(rep, label, e, m, d, allow_du):
    for v in variables(e):
        if v.name != "u":
            rep.failures.append(Failure(label, "variables", f"{v.name} is not an input variable"))
        if v.comp > m:
            rep.failures.append(Failure(label, "variables", f"component u{v.comp} exceeds m={m}"))
        if v.axis and not allow_du:
            rep.failures.append(Failure(label, "no_gradient", "metric entries may depend on u only"))
        if v.axis > d:
            rep.failures.append(Failure(label, "variables", f"derivative axis {v.axis} exceeds d={d}"))


def _validate_metric(spec: MetricSpec, m: int, seed: int) -> ValidationReport:
    rep = ValidationReport("metric")
    d = spec.d
    if d not in (1, 2) or any(len(row) != d for row in spec.entries):
        rep.failures.append(Failure("shape", "square", "metric must be d x d with d in {1, 2}"))
        return rep
    for k in range(d):
        for l in range(d):
            _check_vars(rep, f"g[{k + 1}][{l + 1}]", spec.entries[k][l], m, d, allow_du=False)
    if rep.failures:
        return rep
    zero = np.zeros((m, 1), dtype=complex)
    for k in range(d):
        for l in range(d):
            try:
                val = evaluate_pointwise(spec.entries[k][l], zero)[0]
            except SingularityError as exc:
                rep.failures.append(Failure(f"g[{k + 1}][{l + 1}]", "identity_at_zero", str(exc)))
                continue
            if val != (1.0 if k == l else 0.0):
                rep.failures.append(Failure(f"g[{k + 1}][{l + 1}]", "identity_at_zero", f"g(0) entry is {val}"))
    grid = _probe_grid(d)
    worst_imag = worst_asym = 0.0
    for n, probe in enumerate(_probe_fields(grid, m, 16, seed)):
        vals = [[None] * d for _ in range(d)]
        for k in range(d):
            for l in range(d):
                try:
                    vals[k][l] = evaluate_pointwise(spec.entries[k][l], probe)
                except SingularityError as exc:
                    rep.failures.append(Failure(f"g[{k + 1}][{l + 1}]", "finite", f"probe {n}: {exc}"))
                    return rep
        for k in range(d):
            for l in range(d):
                v = vals[k][l]
                scale = 1.0 + np.abs(v).max()
                im = float(np.abs(v.imag).max() / scale)
                worst_imag = max(worst_imag, im)
                if im > 1e-12:
                    rep.failures.append(Failure(f"g[{k + 1}][{l + 1}]", "real", f"probe {n}: imaginary part {im:.3g}"))
                if l > k:
                    asym = float(np.abs(v - vals[l][k]).max() / scale)
                    worst_asym = max(worst_asym, asym)
                    if asym > 1e-12:
                        rep.failures.append(Failure(f"g[{k + 1}][{l + 1}]", "symmetric", f"probe {n}: asymmetry {asym:.3g}"))
        if rep.failures:
            break
    rep.measurements.update(max_imag=worst_imag, max_asymmetry=worst_asym, probes=16)
    return rep


def _validate_nonlinearity(spec: NonlinearitySpec, d: int, seed: int) -> ValidationReport:
    rep = ValidationReport("nonlinearity")
    m = spec.m
    for a, e in enumerate(spec.components):
        _check_vars(rep, f"F[{a + 1}]", e, m, d, allow_du=True)
    if rep.failures:
        return rep
    zero = np.zeros((m, 1), dtype=complex)
    zgrad = np.zeros((d, m, 1), dtype=complex)
    for a, e in enumerate(spec.components):
        try:
            val = evaluate_pointwise(e, zero, zgrad)[0]
        except SingularityError as exc:
            rep.failures.append(Failure(f"F[{a + 1}]", "zero_at_zero", str(exc)))
            continue
        if val != 0:
            rep.failures.append(Failure(f"F[{a + 1}]", "zero_at_zero", f"F(0) = {val}"))
    if rep.failures:
        return rep
    grid = _probe_grid(d)
    w = _probe_fields(grid, m, 1, seed)[0]
    dw = _gradient_arrays(w, grid)

    def size(eps, e):
        v = evaluate_pointwise(e, eps * w, eps * dw)
        return float(np.sqrt(np.sum(np.abs(v) ** 2) * grid.cell_volume)) / eps

    for a, e in enumerate(spec.components):
        try:
            r3, r4 = size(1e-3, e), size(1e-4, e)
        except SingularityError as exc:
            rep.failures.append(Failure(f"F[{a + 1}]", "quadratic_vanishing", str(exc)))
            continue
        rep.measurements[f"F[{a + 1}]"] = {"ratio_1e-3": r3, "ratio_1e-4": r4}
        if r4 > 0.0 and r3 / r4 < 5.0:
            rep.failures.append(
                Failure(f"F[{a + 1}]", "quadratic_vanishing", f"|F(ew)|/e drops by {r3 / r4:.3g} from e=1e-3 to 1e-4, need >= 5")
            )
    return rep


# ---------------------------------------------------------------------------
# presets


def _diag(d: int, on: str) -> list[list[str]]:
    return [[on if k == l else "0" for l in range(d)] for k in range(d)]


METRIC_PRESETS = {
    "identity": lambda d: _diag(d, "1"),
    "conformal": lambda d: _diag(d, "1+abs2(u)"),
}

NONLINEARITY_PRESETS = {
    "zero": ["0"],
    "cubic": ["abs2(u)*u"],
    "deriv-quadratic": ["conj(u)*dx1(u)"],
}


def metric_preset(name: str, d: int = 1) -> MetricSpec:
    try:
        rows = METRIC_PRESETS[name](d)
    except KeyError:
        raise ValidationError(f"unknown metric preset {name!r}") from None
    return MetricSpec.from_strings(rows)


def nonlinearity_preset(name: str) -> NonlinearitySpec:
    try:
        comps = NONLINEARITY_PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown nonlinearity preset {name!r}") from None
    return NonlinearitySpec.from_strings(comps)
