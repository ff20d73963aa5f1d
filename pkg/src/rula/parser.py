"""Recursive-descent parser for RuLa source.

Implements the language grammar as a scannerless PEG: ordered choice with
backtracking, implicit whitespace and comment skipping between tokens, and
atomic lexical rules for identifiers, numbers and strings.  Failures track
the furthest position reached and the token classes expected there, which is
what ParseError and render_error report.

Two departures from the published grammar text, both repairing obvious
defects in it: comparison operators are matched longest first (so "<=" is
not shadowed by "<"), and keywords only match on a word boundary (so
"promoted" is an identifier, not the keyword "promote" plus "d").
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ast

RESERVED = frozenset(
    "let import if else for in match ruleset rule cond act set get true false promote".split()
)
TYPE_WORDS = frozenset("int u_int float bool str vec Qubit Repeater Message Result".split())

_IDENT_START = frozenset("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ")
_IDENT_CONT = _IDENT_START | frozenset("0123456789_")
_HEX_DIGITS = frozenset("0123456789abcdefABCDEF")


class ParseError(Exception):
    """Syntax error with position and the expected-token summary."""

    def __init__(self, source: str, pos: int, expected: set[str], filename: str = "<input>"):
        self.source = source
        self.pos = pos
        self.expected = sorted(expected)
        self.filename = filename
        self.line, self.column = _line_col(source, pos)
        super().__init__(
            f"parse failure at {self.line}:{self.column}, expected: {', '.join(self.expected)}"
        )


def _line_col(source: str, pos: int) -> tuple[int, int]:
    line = source.count("\n", 0, pos) + 1
    last_nl = source.rfind("\n", 0, pos)
    return line, pos - last_nl


def render_error(err: ParseError) -> str:
    """Format a parse error with the offending line and a caret marker."""
    lines = err.source.splitlines() or [""]
    index = min(err.line, len(lines)) - 1
    excerpt = lines[index]
    caret = " " * (err.column - 1) + "^"
    expected = ", ".join(err.expected)
    return (
        f"error: parse failure at {err.line}:{err.column}\n"
        f"  {excerpt}\n"
        f"  {caret}\n"
        f"expected: {expected}"
    )


@dataclass(frozen=True)
class StyleWarning:
    message: str
    span: ast.Span


class _Fail(Exception):
    """Internal backtracking signal; carries no message.

    Raised as a fresh instance every time: re-raising one shared instance
    would keep extending its traceback chain for the life of the process.
    """


class _Parser:
    def __init__(self, source: str):
        self.src = source
        self.n = len(source)
        self.pos = 0
        self.last = 0  # end of the last consumed token; spans stop here
        self.far_pos = 0
        self.far_expected: set[str] = set()
        self.warnings: list[StyleWarning] = []

    # --- machinery -----------------------------------------------------------

    def _skip(self) -> None:
        src, n = self.src, self.n
        pos = self.pos
        while pos < n:
            ch = src[pos]
            if ch in " \n\t\r":
                pos += 1
            elif src.startswith("//", pos):
                end = src.find("\n", pos)
                pos = n if end == -1 else end + 1
            elif src.startswith("/*", pos):
                end = src.find("*/", pos)
                pos = n if end == -1 else end + 2
            else:
                break
        self.pos = pos

    def _fail(self, expected: str):
        if self.pos > self.far_pos:
            self.far_pos = self.pos
            self.far_expected = {expected}
        elif self.pos == self.far_pos:
            self.far_expected.add(expected)
        raise _Fail() from None

    def _mark(self) -> int:
        self._skip()
        return self.pos

    def _span(self, start: int) -> ast.Span:
        return ast.Span(start, max(start, self.last))

    def _lit(self, text: str, label: str | None = None):
        self._skip()
        if self.src.startswith(text, self.pos):
            self.pos += len(text)
            self.last = self.pos
        else:
            self._fail(label or f'"{text}"')

    def _try_lit(self, text: str) -> bool:
        self._skip()
        if self.src.startswith(text, self.pos):
            self.pos += len(text)
            self.last = self.pos
            return True
        return False

    def _kw(self, word: str):
        self._skip()
        end = self.pos + len(word)
        if self.src[self.pos : end].lower() == word.lower() and (
            end >= self.n or self.src[end] not in _IDENT_CONT
        ):
            self.pos = end
            self.last = end
        else:
            self._fail(word)

    def _try_kw(self, word: str) -> bool:
        saved = self.pos
        try:
            self._kw(word)
            return True
        except _Fail:
            self.pos = saved
            return False

    def _choice(self, *alternatives):
        saved = self.pos
        for alt in alternatives:
            try:
                return alt()
            except _Fail:
                self.pos = saved
        raise _Fail() from None

    def _opt(self, fn):
        saved = self.pos
        try:
            return fn()
        except _Fail:
            self.pos = saved
            return None

    def _many(self, fn) -> list:
        out = []
        while True:
            saved = self.pos
            try:
                out.append(fn())
            except _Fail:
                self.pos = saved
                return out

    # --- lexical rules -------------------------------------------------------

    def _ident_raw(self) -> str:
        self._skip()
        start = self.pos
        if start >= self.n or self.src[start] not in _IDENT_START:
            self._fail("identifier")
        pos = start + 1
        while pos < self.n and self.src[pos] in _IDENT_CONT:
            pos += 1
        self.pos = pos
        self.last = pos
        return self.src[start:pos]

    def ident(self) -> str:
        saved = self.pos
        word = self._ident_raw()
        if word in RESERVED or word in TYPE_WORDS:
            self.pos = saved
            self._fail("identifier")
        return word

    def repeater_ident(self) -> ast.RepeaterIdent:
        start = self._mark()
        self._lit("#")
        if self.pos < self.n and self.src[self.pos] in _IDENT_START:
            name = self._ident_raw()
        else:
            self._fail("identifier")
        return ast.RepeaterIdent("#" + name, span=self._span(start))

    def _digits(self) -> str:
        start = self.pos
        while self.pos < self.n and self.src[self.pos].isdigit():
            self.pos += 1
        if self.pos == start:
            self._fail("digit")
        self.last = self.pos
        return self.src[start : self.pos]

    def _int_token(self, guard: bool = True) -> int:
        self._skip()
        text = self._digits()
        if guard and self.pos < self.n and self.src[self.pos] in _IDENT_START:
            self._fail("integer")
        return int(text)

    def number(self) -> ast.Expr:
        start = self._mark()
        sign = 1
        if self._try_lit("-"):
            sign = -1
        elif self._try_lit("+"):
            pass
        self._skip()
        head = self.pos
        if head < self.n and self.src[head].isdigit():
            digits = self._digits()
            value: int | float
            if self.pos < self.n and self.src[self.pos] == "." and (
                self.pos + 1 < self.n and self.src[self.pos + 1].isdigit()
            ):
                self.pos += 1
                frac = self._digits()
                value = float(f"{digits}.{frac}")
                is_float = True
            else:
                value = int(digits)
                is_float = False
            # Exponent suffix promotes the literal to a float.
            if self.pos < self.n and self.src[self.pos] == "e":
                save = self.pos
                self.pos += 1
                if self.pos < self.n and self.src[self.pos] in "+-":
                    self.pos += 1
                if self.pos < self.n and self.src[self.pos].isdigit():
                    exp_digits = self._digits()
                    exp_sign = self.src[save + 1] if self.src[save + 1] in "+-" else "+"
                    value = float(f"{value}e{exp_sign}{exp_digits}")
                    is_float = True
                else:
                    self.pos = save
            if self.pos < self.n and self.src[self.pos] in _IDENT_START:
                self._fail("number")
            if is_float:
                return ast.FloatLit(sign * float(value), span=self._span(start))
            return ast.IntLit(sign * int(value), span=self._span(start))
        if head < self.n and self.src[head] in _IDENT_START:
            name = self._ident_raw()
            if name in RESERVED or name in TYPE_WORDS:
                self._fail("number")
            span = self._span(start)
            if sign < 0:
                return ast.NegIdent(name, span=span)
            return ast.Ident(name, span=span)
        self._fail("number")
        raise AssertionError

    def binary(self) -> ast.IntLit:
        start = self._mark()
        self._lit("0b")
        digits_start = self.pos
        while self.pos < self.n and self.src[self.pos] in "01":
            self.pos += 1
        self.last = self.pos
        text = self.src[digits_start : self.pos]
        return ast.IntLit(int(text, 2) if text else 0, span=self._span(start))

    def hex_lit(self) -> ast.IntLit:
        start = self._mark()
        self._lit("0x")
        digits_start = self.pos
        while self.pos < self.n and self.src[self.pos] in _HEX_DIGITS:
            self.pos += 1
        self.last = self.pos
        text = self.src[digits_start : self.pos]
        return ast.IntLit(int(text, 16) if text else 0, span=self._span(start))

    def unicord(self) -> ast.UnicordLit:
        start = self._mark()
        self._lit("0u")
        digits_start = self.pos
        while self.pos < self.n and self.src[self.pos] in _HEX_DIGITS:
            self.pos += 1
        self.last = self.pos
        return ast.UnicordLit(self.src[digits_start : self.pos], span=self._span(start))

    def string(self) -> ast.StringLit:
        start = self._mark()
        self._lit('"', "string")
        chars_start = self.pos
        while self.pos < self.n and self.src[self.pos] not in '\\"':
            self.pos += 1
        value = self.src[chars_start : self.pos]
        self._lit('"', "closing quote")
        return ast.StringLit(value, span=self._span(start))

    def bool_lit(self) -> ast.BoolLit:
        start = self._mark()
        if self._try_kw("true"):
            return ast.BoolLit(True, span=self._span(start))
        if self._try_kw("false"):
            return ast.BoolLit(False, span=self._span(start))
        self._fail("boolean")
        raise AssertionError

    def literal_expr(self) -> ast.Expr:
        start = self._mark()

        def plain_ident():
            return ast.Ident(self.ident(), span=self._span(start))

        return self._choice(
            self.bool_lit,
            self.string,
            plain_ident,
            self.number,
            self.binary,
            self.hex_lit,
            self.unicord,
        )

    # --- types ---------------------------------------------------------------

    def typedef_lit(self) -> ast.TypeAnnotation:
        start = self._mark()
        if self._try_kw("vec"):
            self._lit("[")
            inner = self.typedef_lit()
            self._lit("]")
            return ast.TypeAnnotation("vec", inner, span=self._span(start))
        for kind in ("u_int", "int", "float", "bool", "str", "Qubit", "Repeater", "Message", "Result"):
            if self._try_kw(kind):
                return ast.TypeAnnotation(kind, span=self._span(start))
        self._fail("type")
        raise AssertionError

    # --- expressions ---------------------------------------------------------

    def expr(self) -> ast.Expr:
        return self._choice(
            self.rule_call_expr,
            self.get_expr,
            self.comp_expr,
            self.term_expr,
            self.vector,
            self.tuple_expr,
            self.fn_call_expr,
            self.variable_call_expr,
            self.literal_expr,
        )

    def rule_call_expr(self) -> ast.RuleCall:
        start = self._mark()
        name = self.ident()
        self._lit("<")
        repeater = self.repeater_call()
        self._lit(">")
        self._lit("(")
        args = self._call_args()
        self._lit(")")
        return ast.RuleCall(name, repeater, tuple(args), span=self._span(start))

    def repeater_call(self) -> ast.RepeaterCall:
        start = self._mark()
        self._lit("#repeaters", "#repeaters")
        self._lit("(")

        def index_ident() -> ast.Ident:
            istart = self._mark()
            return ast.Ident(self.ident(), span=self._span(istart))

        def index_int() -> ast.IntLit:
            istart = self._mark()
            return ast.IntLit(self._int_token(), span=self._span(istart))

        index = self._choice(self.term_expr, index_ident, index_int)
        self._lit(")")
        return ast.RepeaterCall(index, span=self._span(start))

    def get_expr(self) -> ast.GetExpr:
        start = self._mark()
        self._kw("get")
        return ast.GetExpr(self.ident(), span=self._span(start))

    def comp_expr(self) -> ast.CompExpr:
        start = self._mark()
        lhs = self.comparable()
        op = self.comp_op()
        rhs = self.comparable()
        return ast.CompExpr(lhs, op, rhs, span=self._span(start))

    def comparable(self) -> ast.Expr:
        return self._choice(
            self.get_expr,
            self.term_expr,
            self.variable_call_expr,
            self.fn_call_expr,
            self.literal_expr,
        )

    def comp_op(self) -> str:
        self._skip()
        for op in ("<=", ">=", "==", "!=", "<", ">"):
            if self.src.startswith(op, self.pos):
                self.pos += len(op)
                return op
        self._fail("comparison operator")
        raise AssertionError

    def term_expr(self) -> ast.TermExpr:
        start = self._mark()
        operands = [self.inner_term()]
        ops = []
        while True:
            saved = self.pos
            try:
                ops.append(self.arith_op())
                operands.append(self.inner_term())
            except _Fail:
                self.pos = saved
                break
        if not ops:
            self._fail("arithmetic operator")
        return ast.TermExpr(tuple(operands), tuple(ops), span=self._span(start))

    def inner_term(self) -> ast.Expr:
        def parenthesized():
            self._lit("(")
            inner = self.term_expr()
            self._lit(")")
            return inner

        return self._choice(self.terms, parenthesized)

    def terms(self) -> ast.Expr:
        return self._choice(
            self.get_expr, self.variable_call_expr, self.fn_call_expr, self.literal_expr
        )

    def arith_op(self) -> str:
        self._skip()
        if self.pos < self.n and self.src[self.pos] in "+-*/%^":
            op = self.src[self.pos]
            self.pos += 1
            return op
        self._fail("arithmetic operator")
        raise AssertionError

    def vector(self) -> ast.VectorLit:
        start = self._mark()
        self._lit("[")
        items: list[ast.Expr] = []
        first = self._opt(self.literal_expr)
        if first is not None:
            items.append(first)
            while True:
                saved = self.pos
                if not self._try_lit(","):
                    break
                item = self._opt(self.literal_expr)
                if item is None:
                    self.pos = saved
                    break
                items.append(item)
            self._try_lit(",")
        self._lit("]")
        return ast.VectorLit(tuple(items), span=self._span(start))

    def tuple_expr(self) -> ast.TupleLit:
        start = self._mark()
        self._lit("(")
        items: list[ast.Expr] = []
        first = self._opt(self.expr)
        if first is not None:
            items.append(first)
            while True:
                saved = self.pos
                if not self._try_lit(","):
                    break
                item = self._opt(self.expr)
                if item is None:
                    self.pos = saved
                    break
                items.append(item)
            self._try_lit(",")
        self._lit(")")
        return ast.TupleLit(tuple(items), span=self._span(start))

    def fn_call_expr(self) -> ast.FnCall:
        start = self._mark()
        name = self.ident()
        self._lit("(")
        args = self._call_args()
        self._lit(")")
        return ast.FnCall(name, tuple(args), span=self._span(start))

    def _call_args(self) -> list[ast.Expr]:
        args: list[ast.Expr] = []
        first = self._opt(self.fn_call_arg)
        if first is not None:
            args.append(first)
            while self._try_lit(","):
                args.append(self.fn_call_arg())
        return args

    def fn_call_arg(self) -> ast.Expr:
        return self._choice(
            self.term_expr, self.fn_call_expr, self.variable_call_expr, self.literal_expr
        )

    def variable_call_expr(self) -> ast.VariableCall:
        start = self._mark()
        parts = [self.callable_part()]
        self._lit(".")
        parts.append(self.callable_part())
        while True:
            saved = self.pos
            if not self._try_lit("."):
                break
            try:
                parts.append(self.callable_part())
            except _Fail:
                self.pos = saved
                break
        return ast.VariableCall(tuple(parts), span=self._span(start))

    def callable_part(self) -> ast.FnCall | ast.RepeaterIdent | ast.Ident:
        start = self._mark()

        def plain_ident():
            return ast.Ident(self.ident(), span=self._span(start))

        return self._choice(self.fn_call_expr, self.repeater_ident, plain_ident)

    # --- statements ----------------------------------------------------------

    def stmt(self) -> ast.Stmt:
        return self._choice(
            self.let_stmt,
            self.if_stmt,
            self.for_stmt,
            self.match_stmt,
            self.promote_stmt,
            self.set_stmt,
            self.send_stmt,
            self.expr_stmt,
        )

    def expr_stmt(self) -> ast.ExprStmt:
        start = self._mark()
        value = self.expr()
        return ast.ExprStmt(value, span=self._span(start))

    def ident_typed(self) -> ast.TypedName:
        start = self._mark()
        name = self.ident()
        self._lit(":")
        annotation = self.typedef_lit()
        return ast.TypedName(name, annotation, span=self._span(start))

    def let_stmt(self) -> ast.LetStmt:
        start = self._mark()
        self._kw("let")

        def single():
            return [self.ident_typed()]

        def group():
            self._lit("(")
            names = [self.ident_typed()]
            while self._try_lit(","):
                names.append(self.ident_typed())
            self._lit(")")
            return names

        targets = self._choice(single, group)
        self._lit("=")
        value = self.expr()
        return ast.LetStmt(tuple(targets), value, span=self._span(start))

    def if_block(self) -> ast.Expr:
        # comp_expr first: a comparison whose lhs is a get/literal would
        # otherwise be truncated by the shorter alternative committing early
        return self._choice(self.comp_expr, self.get_expr, self.literal_expr)

    def _block(self) -> tuple[ast.Stmt, ...]:
        self._lit("{")
        body = self._many(self.stmt)
        self._lit("}")
        return tuple(body)

    def if_stmt(self) -> ast.IfStmt:
        start = self._mark()
        self._kw("if")
        self._lit("(")
        cond = self.if_block()
        self._lit(")")
        then = self._block()
        branches = [(cond, then)]
        orelse: tuple[ast.Stmt, ...] | None = None
        while True:
            saved = self.pos
            if not self._try_kw("else"):
                break
            if self._try_kw("if"):
                self._lit("(")
                elif_cond = self.if_block()
                self._lit(")")
                branches.append((elif_cond, self._block()))
            else:
                try:
                    orelse = self._block()
                except _Fail:
                    self.pos = saved
                break
        return ast.IfStmt(tuple(branches), orelse, span=self._span(start))

    def for_stmt(self) -> ast.ForStmt:
        start = self._mark()
        self._kw("for")

        def single():
            return [self.ident()]

        def multi():
            self._lit("(")
            names = [self.ident()]
            while self._try_lit(","):
                names.append(self.ident())
            self._lit(")")
            return names

        names = self._choice(single, multi)
        self._kw("in")
        generator = self.for_generator()
        body = self._block()
        return ast.ForStmt(tuple(names), generator, body, span=self._span(start))

    def for_generator(self) -> ast.Series | ast.Expr:
        return self._choice(self.series, self.expr)

    def series(self) -> ast.Series:
        start = self._mark()
        value = self._int_token()
        self._lit("..")
        stop = self.expr()
        return ast.Series(value, stop, span=self._span(start))

    def match_stmt(self) -> ast.MatchStmt:
        start = self._mark()
        self._kw("match")
        subject = self.expr()
        self._lit("{")

        def arm():
            arm_start = self._mark()
            pattern = self.literal_expr()
            self._lit("=>")
            body = self.match_action()
            self._lit(",")
            return ast.MatchArm(pattern, body, span=self._span(arm_start))

        arms = self._many(arm)
        otherwise: tuple[ast.Stmt, ...] | None = None
        if self._try_kw("otherwise"):
            self._lit("=>")
            otherwise = self.match_action()
        self._lit("}")
        return ast.MatchStmt(subject, tuple(arms), otherwise, span=self._span(start))

    def match_action(self) -> tuple[ast.Stmt, ...]:
        self._lit("{")
        stmts: list[ast.Stmt] = []
        first = self._opt(self.stmt)
        if first is not None:
            stmts.append(first)
        while self._try_lit(","):
            stmts.append(self.stmt())
        self._lit("}")
        return tuple(stmts)

    def promote_stmt(self) -> ast.PromoteStmt:
        start = self._mark()
        self._kw("promote")
        values = [self.promotable()]
        while self._try_lit(","):
            values.append(self.promotable())
        return ast.PromoteStmt(tuple(values), span=self._span(start))

    def promotable(self) -> ast.Expr:
        return self._choice(
            self.comp_expr,
            self.term_expr,
            self.vector,
            self.tuple_expr,
            self.variable_call_expr,
            self.literal_expr,
        )

    def set_stmt(self) -> ast.SetStmt:
        start = self._mark()
        self._kw("set")
        name = self.ident()
        alias = None
        if self._try_kw("as"):
            alias = self.ident()
        return ast.SetStmt(name, alias, span=self._span(start))

    def send_stmt(self) -> ast.SendStmt:
        start = self._mark()
        call = self.fn_call_expr()
        self._lit("->", '"->"')
        destination = self.expr()
        return ast.SendStmt(call, destination, span=self._span(start))

    # --- rules and program ---------------------------------------------------

    def cond_expr(self) -> ast.CondExpr:
        start = self._mark()
        self._kw("cond")
        self._lit("{")
        clauses = self._many(self.cond_clause)
        self._lit("}")
        return ast.CondExpr(tuple(clauses), span=self._span(start))

    def cond_clause(self) -> ast.CondClause:
        start = self._mark()

        def res_assign():
            self._lit("@")
            name = self.ident()
            self._lit(":")
            call = self.fn_call_expr()
            return ast.CondClause(name, call, span=self._span(start))

        def bare_fn():
            return ast.CondClause(None, self.fn_call_expr(), span=self._span(start))

        def bare_var():
            return ast.CondClause(None, self.variable_call_expr(), span=self._span(start))

        return self._choice(res_assign, bare_fn, bare_var)

    def act_expr(self) -> ast.ActExpr:
        start = self._mark()
        self._kw("act")
        self._lit("{")
        stmts = self._many(self.stmt)
        self._lit("}")
        return ast.ActExpr(tuple(stmts), span=self._span(start))

    def ret_type_annotation(self) -> tuple[ast.ReturnType, ...]:
        def one() -> ast.ReturnType:
            start = self._mark()
            annotation = self.typedef_lit()
            maybe = self._try_lit("?")
            return ast.ReturnType(annotation, maybe, span=self._span(start))

        def group() -> tuple[ast.ReturnType, ...]:
            self._lit("(")
            types = [one()]
            while self._try_lit(","):
                types.append(one())
            self._lit(")")
            return tuple(types)

        def single() -> tuple[ast.ReturnType, ...]:
            return (one(),)

        return self._choice(single, group)

    def rule_stmt(self) -> ast.RuleStmt:
        start = self._mark()
        self._kw("rule")
        name = self.ident()
        self._lit("<")
        repeater = self.repeater_ident()
        self._lit(">")
        params = self.argument_def()
        return_types: tuple[ast.ReturnType, ...] = ()
        arrow_start = self._mark()
        if self._try_lit(":->"):
            return_types = self.ret_type_annotation()
        elif self._try_lit("->"):
            self.warnings.append(
                StyleWarning(
                    'return annotation written with "->"; the canonical arrow is ":->"',
                    self._span(arrow_start),
                )
            )
            return_types = self.ret_type_annotation()
        self._lit("{")
        lets = self._many(self.let_stmt)
        cond = self.cond_expr()
        self._lit("=>")
        act = self.act_expr()
        trailing = self._many(self.stmt)
        self._lit("}")
        return ast.RuleStmt(
            name,
            repeater.name,
            tuple(params),
            return_types,
            tuple(lets),
            cond,
            act,
            tuple(trailing),
            span=self._span(start),
        )

    def argument_def(self) -> list[ast.TypedName]:
        self._lit("(")
        params: list[ast.TypedName] = []

        def param() -> ast.TypedName:
            start = self._mark()
            try:
                return self.ident_typed()
            except _Fail:
                self.pos = start
            return ast.TypedName(self.ident(), None, span=self._span(start))

        first = self._opt(param)
        if first is not None:
            params.append(first)
            while self._try_lit(","):
                params.append(param())
        self._lit(")")
        return params

    def import_stmt(self) -> ast.ImportStmt:
        start = self._mark()
        self._kw("import")
        is_rule = False
        saved = self.pos
        if self._try_lit("("):
            if self._try_kw("rule") and self._try_lit(")"):
                is_rule = True
            else:
                self.pos = saved
        path = [self.ident()]
        names: list[str] = []
        while True:
            saved = self.pos
            if not self._try_lit("::"):
                break
            if self._try_lit("{"):
                names.append(self.ident())
                while self._try_lit(","):
                    names.append(self.ident())
                self._lit("}")
                break
            try:
                path.append(self.ident())
            except _Fail:
                self.pos = saved
                break
        return ast.ImportStmt(tuple(path), tuple(names), is_rule, span=self._span(start))

    def repeaters_decl(self) -> bool:
        self._lit("#repeaters", "#repeaters declaration")
        self._lit(":")
        self._kw("vec")
        self._lit("[")
        self._kw("Repeater")
        self._lit("]")
        return True

    def ruleset_stmt(self) -> ast.RulesetStmt:
        start = self._mark()
        self._kw("ruleset")
        name = self.ident()
        self._lit("{")
        stmts = self._many(self.stmt)
        self._lit("}")
        return ast.RulesetStmt(name, tuple(stmts), span=self._span(start))

    def program(self) -> ast.Program:
        start = self._mark()
        has_decl = bool(self._opt(self.repeaters_decl))
        imports = self._many(self.import_stmt)
        rules = self._many(self.rule_stmt)
        ruleset = self._opt(self.ruleset_stmt)
        return ast.Program(has_decl, tuple(imports), tuple(rules), ruleset, span=self._span(start))

    def end_of_input(self):
        self._skip()
        if self.pos != self.n:
            self._fail("end of input")


def _run(source: str, entry, filename: str) -> tuple[object, list[StyleWarning]]:
    parser = _Parser(source)
    try:
        node = entry(parser)
        parser.end_of_input()
    except _Fail:
        pos = max(parser.far_pos, parser.pos)
        raise ParseError(source, pos, parser.far_expected or {"valid syntax"}, filename) from None
    return node, parser.warnings


def parse(source: str, filename: str = "<input>") -> ast.Program:
    """Parse a complete RuLa program; raises ParseError on invalid syntax."""
    program, _ = parse_with_warnings(source, filename)
    return program


def parse_with_warnings(
    source: str, filename: str = "<input>"
) -> tuple[ast.Program, list[StyleWarning]]:
    program, warnings = _run(source, _Parser.program, filename)
    return program, warnings  # type: ignore[return-value]


def parse_statements(source: str, filename: str = "<input>") -> tuple[ast.Stmt, ...]:
    """Parse a statement sequence, for fragment-level checks."""
    stmts, _ = _run(source, lambda p: tuple(p._many(p.stmt)), filename)
    return stmts  # type: ignore[return-value]


def parse_expression(source: str, filename: str = "<input>") -> ast.Expr:
    """Parse a single expression, for fragment-level checks."""
    node, _ = _run(source, _Parser.expr, filename)
    return node  # type: ignore[return-value]
