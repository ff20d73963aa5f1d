"""Static analysis: name resolution, typing, and rule-level well-formedness.

The checks enforced here are the ones a RuleSet cannot express dynamically:
promote/return-annotation consistency, the send whitelist, set/get dataflow
ordering across the ruleset body, condition-clause vocabulary, and the method
table for repeater values.  Analysis never stops at the first problem; every
diagnostic found is collected and returned.

Type names are plain strings ("int", "Qubit", ...).  A None type means the
expression could not be typed because of an earlier error; downstream checks
skip None rather than cascading.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from . import ast
from .parser import ParseError, parse

SEVERITY_ERROR = "error"
SEVERITY_WARNING = "warning"

# Functions allowed inside cond blocks, with (parameter types, capture type).
COND_FUNCTIONS: dict[str, tuple[tuple[str, ...], str | None]] = {
    "res": (("u_int", "float", "Repeater", "u_int"), "Qubit"),
    "recv": (("Repeater",), "Message"),
    "cmp": (("Result", "str", "str"), None),
    "check_timer": (("str",), None),
}

# Message builders allowed on the left of "->".
SEND_FUNCTIONS: dict[str, tuple[str, ...]] = {
    "update": ("Qubit", "correction"),
    "meas": ("Qubit", "Result"),
    "transfer": ("Qubit",),
    "free": ("Qubit",),
}

# Names provided by the std::operation library.
STD_OPERATION = frozenset({"x", "y", "z", "h", "cx", "cz", "bsm", "measure"})

_SINGLE_QUBIT_GATES = frozenset({"x", "y", "z", "h"})
_TWO_QUBIT_GATES = frozenset({"cx", "cz"})
_NUMERIC = frozenset({"int", "u_int", "float"})
_MATCHABLE = frozenset({"Result", "int", "u_int", "str", "bool"})


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    code: str
    span: ast.Span
    message: str

    @property
    def is_error(self) -> bool:
        return self.severity == SEVERITY_ERROR


@dataclass(frozen=True)
class RuleSignature:
    name: str
    repeater_param: str
    param_names: tuple[str, ...]
    param_types: tuple[str | None, ...]
    return_types: tuple[str, ...]
    maybe_flags: tuple[bool, ...]
    span: ast.Span


@dataclass(frozen=True)
class Symbol:
    type: str | None
    kind: str  # let-binding, rule-param, cond-capture, loop-var, ruleset-var, builtin
    span: ast.Span


@dataclass
class Analysis:
    program: ast.Program
    diagnostics: list[Diagnostic] = field(default_factory=list)
    types: dict[int, str] = field(default_factory=dict)
    signatures: dict[str, RuleSignature] = field(default_factory=dict)
    # set-producers: variable name -> (rule name, type or None)
    producers: dict[str, tuple[str, str | None]] = field(default_factory=dict)
    # per-rule get consumption: rule name -> [(variable name, span), ...]
    consumers: dict[str, list[tuple[str, ast.Span]]] = field(default_factory=dict)

    @property
    def errors(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.is_error]

    @property
    def ok(self) -> bool:
        return not self.errors


class _Scope:
    def __init__(self, parent: _Scope | None = None):
        self.parent = parent
        self.names: dict[str, Symbol] = {}

    def bind(self, name: str, symbol: Symbol) -> None:
        self.names[name] = symbol

    def lookup(self, name: str) -> Symbol | None:
        scope: _Scope | None = self
        while scope is not None:
            if name in scope.names:
                return scope.names[name]
            scope = scope.parent
        return None


class _Checker:
    def __init__(self, program: ast.Program):
        self.program = program
        self.out = Analysis(program)
        self.current_rule: str | None = None

    # --- diagnostics ---------------------------------------------------------

    def error(self, code: str, span: ast.Span, message: str) -> None:
        self.out.diagnostics.append(Diagnostic(SEVERITY_ERROR, code, span, message))

    def warn(self, code: str, span: ast.Span, message: str) -> None:
        self.out.diagnostics.append(Diagnostic(SEVERITY_WARNING, code, span, message))

    def note_type(self, node: ast.Node, type_name: str | None) -> str | None:
        if type_name is not None:
            self.out.types[id(node)] = type_name
        return type_name

    # --- entry ---------------------------------------------------------------

    def run(self) -> Analysis:
        self.check_imports()
        self.collect_signatures()
        self.collect_producers()
        for rule in self.program.rules:
            self.check_rule(rule)
        if self.program.ruleset is not None:
            self.check_ruleset(self.program.ruleset)
        return self.out

    def check_imports(self) -> None:
        for imp in self.program.imports:
            if imp.is_rule:
                # Spliced by resolve_imports; here the statement itself is inert.
                continue
            if imp.path[:2] == ("std", "operation"):
                members = imp.names if imp.names else imp.path[2:]
                for member in members:
                    if member not in STD_OPERATION:
                        self.error(
                            "unknown-import",
                            imp.span,
                            f"std::operation has no member {member!r}",
                        )
            else:
                self.error(
                    "unknown-import",
                    imp.span,
                    f"module not found: {'::'.join(imp.path)}",
                )

    # --- signatures and producers --------------------------------------------

    def collect_signatures(self) -> None:
        for rule in self.program.rules:
            if rule.name in self.out.signatures:
                self.error("duplicate-rule", rule.span, f"rule {rule.name} is already defined")
                continue
            param_names = tuple(p.name for p in rule.params)
            param_types = tuple(
                str(p.type_annotation) if p.type_annotation is not None else None
                for p in rule.params
            )
            self.out.signatures[rule.name] = RuleSignature(
                rule.name,
                rule.repeater_param,
                param_names,
                param_types,
                tuple(str(r.type_annotation) for r in rule.return_types),
                tuple(r.maybe for r in rule.return_types),
                rule.span,
            )

    def _annotated_names(self, rule: ast.RuleStmt) -> dict[str, str]:
        """Names with statically declared types, for producer pre-scan."""
        known: dict[str, str] = {}
        for p in rule.params:
            if p.type_annotation is not None:
                known[p.name] = str(p.type_annotation)
        for let in rule.lets:
            for target in let.targets:
                if target.type_annotation is not None:
                    known[target.name] = str(target.type_annotation)
        for clause in rule.cond.clauses if rule.cond else []:
            if clause.capture and isinstance(clause.call, ast.FnCall):
                entry = COND_FUNCTIONS.get(clause.call.name)
                if entry and entry[1]:
                    known[clause.capture] = entry[1]

        def scan(stmts) -> None:
            for stmt in stmts:
                if isinstance(stmt, ast.LetStmt):
                    for target in stmt.targets:
                        if target.type_annotation is not None:
                            known[target.name] = str(target.type_annotation)
                elif isinstance(stmt, ast.IfStmt):
                    for _, body in stmt.branches:
                        scan(body)
                    if stmt.orelse:
                        scan(stmt.orelse)
                elif isinstance(stmt, ast.MatchStmt):
                    for arm in stmt.arms:
                        scan(arm.body)
                    if stmt.otherwise:
                        scan(stmt.otherwise)
                elif isinstance(stmt, ast.ForStmt):
                    scan(stmt.body)

        if rule.act:
            scan(rule.act.stmts)
        scan(rule.trailing)
        return known

    def collect_producers(self) -> None:
        for rule in self.program.rules:
            known = self._annotated_names(rule)

            def scan(stmts) -> None:
                for stmt in stmts:
                    if isinstance(stmt, ast.SetStmt):
                        produced = stmt.alias or stmt.name
                        self.out.producers.setdefault(
                            produced, (rule.name, known.get(stmt.name))
                        )
                    elif isinstance(stmt, ast.IfStmt):
                        for _, body in stmt.branches:
                            scan(body)
                        if stmt.orelse:
                            scan(stmt.orelse)
                    elif isinstance(stmt, ast.MatchStmt):
                        for arm in stmt.arms:
                            scan(arm.body)
                        if stmt.otherwise:
                            scan(stmt.otherwise)
                    elif isinstance(stmt, ast.ForStmt):
                        scan(stmt.body)

            if rule.act:
                scan(rule.act.stmts)
            scan(rule.trailing)

    # --- rule bodies ----------------------------------------------------------

    def check_rule(self, rule: ast.RuleStmt) -> None:
        self.current_rule = rule.name
        self.out.consumers.setdefault(rule.name, [])
        scope = _Scope()
        scope.bind(rule.repeater_param, Symbol("Repeater", "rule-param", rule.span))
        seen_params: set[str] = set()
        for p in rule.params:
            if p.name in seen_params:
                self.error("duplicate-param", p.span, f"duplicate parameter {p.name}")
            seen_params.add(p.name)
            declared = str(p.type_annotation) if p.type_annotation is not None else None
            scope.bind(p.name, Symbol(declared, "rule-param", p.span))

        for let in rule.lets:
            self.check_let(let, scope, context="rule")

        act_scope = _Scope(scope)
        if rule.cond is not None:
            self.check_cond(rule.cond, scope, act_scope)

        promotes: list[ast.PromoteStmt] = []
        if rule.act is not None:
            for stmt in rule.act.stmts:
                self.check_act_stmt(stmt, act_scope, promotes)
        for stmt in rule.trailing:
            self.check_act_stmt(stmt, act_scope, promotes)

        self.check_promotes(rule, promotes, act_scope)
        self.current_rule = None

    def check_cond(self, cond: ast.CondExpr, rule_scope: _Scope, act_scope: _Scope) -> None:
        for clause in cond.clauses:
            call = clause.call
            if not isinstance(call, ast.FnCall):
                self.error(
                    "bad-cond-clause",
                    clause.span,
                    "condition clauses must be res, recv, cmp, or check_timer calls",
                )
                continue
            entry = COND_FUNCTIONS.get(call.name)
            if entry is None:
                self.error(
                    "bad-cond-clause",
                    clause.span,
                    f"{call.name} is not a condition function "
                    "(expected res, recv, cmp, or check_timer)",
                )
                continue
            param_types, capture_type = entry
            self.check_call_args(call, param_types, rule_scope)
            if clause.capture is not None:
                if capture_type is None:
                    self.error(
                        "bad-capture",
                        clause.span,
                        f"{call.name} does not produce a value to capture",
                    )
                elif act_scope.lookup(clause.capture) is not None:
                    self.error(
                        "duplicate-capture",
                        clause.span,
                        f"duplicate capture {clause.capture}",
                    )
                else:
                    act_scope.bind(
                        clause.capture, Symbol(capture_type, "cond-capture", clause.span)
                    )

    def check_call_args(
        self, call: ast.FnCall, param_types: tuple[str, ...], scope: _Scope
    ) -> None:
        if len(call.args) != len(param_types):
            self.error(
                "arity",
                call.span,
                f"{call.name} expects {len(param_types)} argument(s), got {len(call.args)}",
            )
        for arg, expected in zip(call.args, param_types):
            actual = self.type_of(arg, scope)
            if actual is None or expected is None:
                continue
            if not _compatible(expected, actual):
                self.error(
                    "type-mismatch",
                    arg.span,
                    f"{call.name} expects {expected}, got {actual}",
                )

    def check_let(self, let: ast.LetStmt, scope: _Scope, context: str) -> None:
        value_type = self.type_of(let.value, scope)
        if len(let.targets) == 1:
            target = let.targets[0]
            declared = str(target.type_annotation) if target.type_annotation else None
            if declared and value_type and not _compatible(declared, value_type):
                self.error(
                    "type-mismatch",
                    let.span,
                    f"cannot bind {value_type} value to {target.name}: {declared}",
                )
            scope.bind(target.name, Symbol(declared or value_type, "let-binding", target.span))
        else:
            # Tuple target: only rule calls return multiple values.
            parts: tuple[str, ...] | None = None
            if isinstance(let.value, ast.RuleCall):
                self.check_rule_call(let.value, scope)
                sig = self.out.signatures.get(let.value.name)
                if sig is not None:
                    parts = sig.return_types
            else:
                self.type_of(let.value, scope)
            if parts is not None and len(parts) != len(let.targets):
                self.error(
                    "arity",
                    let.span,
                    f"{len(let.targets)} targets but the call returns {len(parts)} value(s)",
                )
            for i, target in enumerate(let.targets):
                declared = str(target.type_annotation) if target.type_annotation else None
                inferred = parts[i] if parts is not None and i < len(parts) else None
                scope.bind(
                    target.name, Symbol(declared or inferred, "let-binding", target.span)
                )

    def check_act_stmt(self, stmt: ast.Stmt, scope: _Scope, promotes: list) -> None:
        if isinstance(stmt, ast.LetStmt):
            self.check_let(stmt, scope, context="act")
        elif isinstance(stmt, ast.SendStmt):
            self.check_send(stmt, scope)
        elif isinstance(stmt, ast.SetStmt):
            if scope.lookup(stmt.name) is None:
                self.error("unknown-name", stmt.span, f"unknown identifier {stmt.name}")
        elif isinstance(stmt, ast.PromoteStmt):
            promotes.append(stmt)
            for value in stmt.values:
                self.type_of(value, scope)
        elif isinstance(stmt, ast.MatchStmt):
            self.check_match(stmt, scope, promotes)
        elif isinstance(stmt, ast.IfStmt):
            for cond, body in stmt.branches:
                self.check_runtime_condition(cond, scope)
                for inner in body:
                    self.check_act_stmt(inner, _Scope(scope), promotes)
            if stmt.orelse is not None:
                for inner in stmt.orelse:
                    self.check_act_stmt(inner, _Scope(scope), promotes)
        elif isinstance(stmt, ast.ForStmt):
            self.error(
                "unsupported-stmt", stmt.span, "for loops are not allowed inside act blocks"
            )
        elif isinstance(stmt, ast.ExprStmt):
            self.check_action_expr(stmt.expr, scope)
        else:
            self.error("unsupported-stmt", stmt.span, "statement not allowed here")

    def check_runtime_condition(self, cond: ast.Expr, scope: _Scope) -> None:
        if isinstance(cond, ast.CompExpr):
            self.type_of(cond, scope)
        elif isinstance(cond, ast.GetExpr):
            self.type_of(cond, scope)
        elif isinstance(cond, ast.BoolLit):
            pass
        else:
            actual = self.type_of(cond, scope)
            if actual is not None and actual != "bool":
                self.error(
                    "type-mismatch", cond.span, f"condition must be a comparison, got {actual}"
                )

    def check_match(self, stmt: ast.MatchStmt, scope: _Scope, promotes: list) -> None:
        subject_type = self.type_of(stmt.subject, scope)
        if subject_type is not None and subject_type not in _MATCHABLE:
            self.error(
                "bad-match",
                stmt.subject.span,
                f"match subject must be Result, int, str, or bool, got {subject_type}",
            )
            subject_type = None
        for arm in stmt.arms:
            self.check_match_pattern(arm.pattern, subject_type)
            for inner in arm.body:
                self.check_act_stmt(inner, _Scope(scope), promotes)
        if stmt.otherwise is not None:
            for inner in stmt.otherwise:
                self.check_act_stmt(inner, _Scope(scope), promotes)

    def check_match_pattern(self, pattern: ast.Expr, subject_type: str | None) -> None:
        if subject_type is None:
            return
        if subject_type in ("Result", "str"):
            if not isinstance(pattern, ast.StringLit):
                self.error(
                    "bad-match",
                    pattern.span,
                    f"{subject_type} values match only against string literals",
                )
        elif subject_type in ("int", "u_int"):
            if not isinstance(pattern, ast.IntLit):
                self.error("bad-match", pattern.span, "expected an integer literal pattern")
        elif subject_type == "bool":
            if not isinstance(pattern, ast.BoolLit):
                self.error("bad-match", pattern.span, "expected a boolean literal pattern")

    def check_send(self, stmt: ast.SendStmt, scope: _Scope) -> None:
        call = stmt.call
        if call.name not in SEND_FUNCTIONS:
            self.error(
                "bad-send",
                stmt.span,
                f"send requires one of update/free/meas/transfer, got {call.name}",
            )
        else:
            self.check_call_args(call, SEND_FUNCTIONS[call.name], scope)
        dest_type = self.type_of(stmt.destination, scope)
        if dest_type is not None and dest_type != "Repeater":
            self.error(
                "bad-send",
                stmt.destination.span,
                f"send destination must be a Repeater, got {dest_type}",
            )

    def check_action_expr(self, expr: ast.Expr, scope: _Scope) -> None:
        if isinstance(expr, ast.FnCall):
            if expr.name in COND_FUNCTIONS:
                self.error(
                    "bad-action",
                    expr.span,
                    f"{expr.name} may only appear in a cond block",
                )
                return
            if expr.name in ("update", "meas", "transfer"):
                self.error(
                    "bad-action",
                    expr.span,
                    f"{expr.name}(...) must be sent to a repeater with ->",
                )
                return
        self.type_of(expr, scope)

    def check_promotes(
        self, rule: ast.RuleStmt, promotes: list[ast.PromoteStmt], scope: _Scope
    ) -> None:
        sig = self.out.signatures.get(rule.name)
        if sig is None:
            return
        if promotes and not sig.return_types:
            for stmt in promotes:
                self.error(
                    "promote-annotation",
                    stmt.span,
                    "promote requires return type annotation on the rule",
                )
            return
        for stmt in promotes:
            if len(stmt.values) != len(sig.return_types):
                self.error(
                    "promote-arity",
                    stmt.span,
                    f"rule {rule.name} promotes {len(stmt.values)} value(s) "
                    f"but declares {len(sig.return_types)}",
                )
                continue
            for value, expected in zip(stmt.values, sig.return_types):
                actual = self.out.types.get(id(value))
                if actual is not None and not _compatible(expected, actual):
                    self.error(
                        "promote-type",
                        value.span,
                        f"promoted value is {actual}, the rule declares {expected}",
                    )
        if sig.return_types and not promotes:
            if not all(sig.maybe_flags):
                self.error(
                    "promote-missing",
                    rule.span,
                    f"rule {rule.name} declares a return type but never promotes; "
                    'annotate with "?" if promotion is conditional',
                )
            return
        if sig.return_types and not all(sig.maybe_flags):
            if not self._always_promotes(rule):
                self.error(
                    "promote-missing",
                    rule.span,
                    f"some arms of rule {rule.name} exit without promoting; "
                    'annotate the return type with "?" or promote in every arm',
                )

    def _always_promotes(self, rule: ast.RuleStmt) -> bool:
        def block_promotes(stmts) -> bool:
            return any(stmt_promotes(s) for s in stmts)

        def stmt_promotes(stmt: ast.Stmt) -> bool:
            if isinstance(stmt, ast.PromoteStmt):
                return True
            if isinstance(stmt, ast.IfStmt):
                if stmt.orelse is None:
                    return False
                return all(block_promotes(body) for _, body in stmt.branches) and block_promotes(
                    stmt.orelse
                )
            if isinstance(stmt, ast.MatchStmt):
                arms_ok = all(block_promotes(arm.body) for arm in stmt.arms)
                if stmt.otherwise is None:
                    # Literal arms are never exhaustive over strings/ints.
                    return False
                return arms_ok and block_promotes(stmt.otherwise)
            return False

        stmts = list(rule.act.stmts) if rule.act else []
        stmts.extend(rule.trailing)
        return block_promotes(stmts)

    # --- ruleset body ---------------------------------------------------------

    def check_ruleset(self, ruleset: ast.RulesetStmt) -> None:
        scope = _Scope()
        for stmt in ruleset.stmts:
            self.check_ruleset_stmt(stmt, scope)

    def check_ruleset_stmt(self, stmt: ast.Stmt, scope: _Scope) -> None:
        if isinstance(stmt, ast.LetStmt):
            if isinstance(stmt.value, ast.RuleCall):
                self.check_rule_call(stmt.value, scope)
                sig = self.out.signatures.get(stmt.value.name)
                returns = sig.return_types if sig else None
                if returns is not None and len(stmt.targets) != len(returns):
                    self.error(
                        "arity",
                        stmt.span,
                        f"{len(stmt.targets)} target(s) but rule {stmt.value.name} "
                        f"returns {len(returns)} value(s)",
                    )
                for i, target in enumerate(stmt.targets):
                    declared = str(target.type_annotation) if target.type_annotation else None
                    inferred = returns[i] if returns and i < len(returns) else None
                    if declared and inferred and not _compatible(declared, inferred):
                        self.error(
                            "type-mismatch",
                            target.span,
                            f"rule {stmt.value.name} returns {inferred}, "
                            f"target declares {declared}",
                        )
                    scope.bind(
                        target.name, Symbol(declared or inferred, "ruleset-var", target.span)
                    )
            else:
                self.check_let(stmt, scope, context="ruleset")
                for target in stmt.targets:
                    existing = scope.lookup(target.name)
                    if existing is None:
                        declared = (
                            str(target.type_annotation) if target.type_annotation else None
                        )
                        scope.bind(target.name, Symbol(declared, "ruleset-var", target.span))
        elif isinstance(stmt, ast.ForStmt):
            inner = _Scope(scope)
            if isinstance(stmt.generator, ast.Series):
                stop_type = self.type_of(stmt.generator.stop, scope)
                if stop_type is not None and stop_type not in _NUMERIC:
                    self.error(
                        "type-mismatch",
                        stmt.generator.stop.span,
                        f"range bound must be an integer, got {stop_type}",
                    )
                if len(stmt.names) != 1:
                    self.error(
                        "arity", stmt.span, "integer ranges bind exactly one loop variable"
                    )
                for name in stmt.names:
                    inner.bind(name, Symbol("int", "loop-var", stmt.span))
            else:
                self.type_of(stmt.generator, scope)
                for name in stmt.names:
                    inner.bind(name, Symbol(None, "loop-var", stmt.span))
            for body_stmt in stmt.body:
                self.check_ruleset_stmt(body_stmt, inner)
        elif isinstance(stmt, ast.IfStmt):
            for cond, body in stmt.branches:
                self.check_runtime_condition(cond, scope)
                inner = _Scope(scope)
                for body_stmt in body:
                    self.check_ruleset_stmt(body_stmt, inner)
            if stmt.orelse is not None:
                inner = _Scope(scope)
                for body_stmt in stmt.orelse:
                    self.check_ruleset_stmt(body_stmt, inner)
        elif isinstance(stmt, ast.ExprStmt):
            if isinstance(stmt.expr, ast.RuleCall):
                self.check_rule_call(stmt.expr, scope)
            else:
                self.type_of(stmt.expr, scope)
        elif isinstance(stmt, (ast.PromoteStmt, ast.SetStmt)):
            self.error(
                "unsupported-stmt", stmt.span, "this statement is only valid inside a rule"
            )
        elif isinstance(stmt, ast.SendStmt):
            self.error(
                "unsupported-stmt", stmt.span, "send is only valid inside a rule's act block"
            )
        elif isinstance(stmt, ast.MatchStmt):
            self.error(
                "unsupported-stmt", stmt.span, "match is not allowed at ruleset level"
            )
        else:
            self.error("unsupported-stmt", stmt.span, "statement not allowed here")

    def check_rule_call(self, call: ast.RuleCall, scope: _Scope) -> None:
        index_type = self.type_of(call.repeater.index, scope)
        if index_type is not None and index_type not in _NUMERIC:
            self.error(
                "type-mismatch",
                call.repeater.index.span,
                f"repeater index must be an integer, got {index_type}",
            )
        sig = self.out.signatures.get(call.name)
        if sig is None:
            self.error("unknown-rule", call.span, f"unknown rule {call.name}")
            for arg in call.args:
                self.type_of(arg, scope)
            return
        if len(call.args) != len(sig.param_names):
            self.error(
                "arity",
                call.span,
                f"rule {call.name} takes {len(sig.param_names)} argument(s), "
                f"got {len(call.args)}",
            )
        for arg, expected in zip(call.args, sig.param_types):
            actual = self.type_of(arg, scope)
            if expected is None or actual is None:
                continue
            if not _compatible(expected, actual):
                self.error(
                    "type-mismatch",
                    arg.span,
                    f"rule {call.name} expects {expected}, got {actual}",
                )

    # --- expression typing ----------------------------------------------------

    def type_of(self, expr: ast.Expr, scope: _Scope) -> str | None:
        cached = self.out.types.get(id(expr))
        if cached is not None:
            return cached
        result = self._type_of(expr, scope)
        return self.note_type(expr, result)

    def _type_of(self, expr: ast.Expr, scope: _Scope) -> str | None:
        if isinstance(expr, ast.IntLit):
            return "int"
        if isinstance(expr, ast.FloatLit):
            return "float"
        if isinstance(expr, ast.StringLit):
            return "str"
        if isinstance(expr, ast.BoolLit):
            return "bool"
        if isinstance(expr, ast.UnicordLit):
            self.error("unicord", expr.span, "unicord literals are not supported")
            return None
        if isinstance(expr, ast.Ident):
            symbol = scope.lookup(expr.name)
            if symbol is None:
                self.error("unknown-name", expr.span, f"unknown identifier {expr.name}")
                return None
            return symbol.type
        if isinstance(expr, ast.NegIdent):
            symbol = scope.lookup(expr.name)
            if symbol is None:
                self.error("unknown-name", expr.span, f"unknown identifier {expr.name}")
                return None
            if symbol.type is not None and symbol.type not in _NUMERIC:
                self.error(
                    "type-mismatch", expr.span, f"cannot negate a {symbol.type} value"
                )
                return None
            return symbol.type
        if isinstance(expr, ast.RepeaterIdent):
            if expr.name == "#repeaters":
                return "vec[Repeater]"
            symbol = scope.lookup(expr.name)
            if symbol is None:
                self.error(
                    "unknown-name", expr.span, f"unknown repeater identifier {expr.name}"
                )
                return None
            return symbol.type
        if isinstance(expr, ast.GetExpr):
            if self.current_rule is not None:
                self.out.consumers.setdefault(self.current_rule, []).append(
                    (expr.name, expr.span)
                )
            producer = self.out.producers.get(expr.name)
            return producer[1] if producer else None
        if isinstance(expr, ast.CompExpr):
            return self._type_comp(expr, scope)
        if isinstance(expr, ast.TermExpr):
            return self._type_term(expr, scope)
        if isinstance(expr, ast.VectorLit):
            item_types = {self.type_of(item, scope) for item in expr.items}
            item_types.discard(None)
            if len(item_types) > 1:
                self.error("type-mismatch", expr.span, "vector items must share one type")
                return None
            inner = item_types.pop() if item_types else "int"
            return f"vec[{inner}]"
        if isinstance(expr, ast.TupleLit):
            if len(expr.items) == 1:
                return self.type_of(expr.items[0], scope)
            for item in expr.items:
                self.type_of(item, scope)
            return "tuple"
        if isinstance(expr, ast.FnCall):
            return self._type_fn_call(expr, scope)
        if isinstance(expr, ast.VariableCall):
            return self._type_variable_call(expr, scope)
        if isinstance(expr, ast.RepeaterCall):
            self.type_of(expr.index, scope)
            return "Repeater"
        if isinstance(expr, ast.RuleCall):
            self.check_rule_call(expr, scope)
            sig = self.out.signatures.get(expr.name)
            if sig and len(sig.return_types) == 1:
                return sig.return_types[0]
            return None
        return None

    def _type_comp(self, expr: ast.CompExpr, scope: _Scope) -> str | None:
        lhs = self.type_of(expr.lhs, scope)
        rhs = self.type_of(expr.rhs, scope)
        if lhs is None or rhs is None:
            return "bool"
        ordered = expr.op in ("<", ">", "<=", ">=")
        if "Result" in (lhs, rhs):
            valid = {lhs, rhs} <= {"Result", "str"}
            if not valid:
                self.error(
                    "type-mismatch",
                    expr.span,
                    f"Result values compare only with strings, got {lhs} vs {rhs}",
                )
            elif ordered:
                self.error(
                    "type-mismatch", expr.span, "Result values support only == and !="
                )
            return "bool"
        if lhs in _NUMERIC and rhs in _NUMERIC:
            return "bool"
        if lhs == rhs:
            if ordered and lhs in ("bool",):
                self.error("type-mismatch", expr.span, f"cannot order {lhs} values")
            return "bool"
        self.error("type-mismatch", expr.span, f"cannot compare {lhs} with {rhs}")
        return "bool"

    def _type_term(self, expr: ast.TermExpr, scope: _Scope) -> str | None:
        result: str | None = "int"
        for operand in expr.operands:
            operand_type = self.type_of(operand, scope)
            if operand_type is None:
                result = None
            elif operand_type not in _NUMERIC:
                self.error(
                    "type-mismatch",
                    operand.span,
                    f"arithmetic needs numeric operands, got {operand_type}",
                )
                result = None
            elif operand_type == "float" and result is not None:
                result = "float"
        return result

    def _type_fn_call(self, call: ast.FnCall, scope: _Scope) -> str | None:
        name = call.name
        if name in COND_FUNCTIONS:
            # Typed at the clause level; reaching here means a cond function
            # was used as a plain expression.
            self.error("bad-action", call.span, f"{name} may only appear in a cond block")
            return None
        if name in _SINGLE_QUBIT_GATES:
            if len(call.args) == 0:
                return "correction"
            self.check_call_args(call, ("Qubit",), scope)
            return "unit"
        if name in _TWO_QUBIT_GATES:
            self.check_call_args(call, ("Qubit", "Qubit"), scope)
            return "unit"
        if name == "bsm":
            self.check_call_args(call, ("Qubit", "Qubit"), scope)
            return "Result"
        if name == "measure":
            self.check_call_args(call, ("Qubit", "str"), scope)
            if len(call.args) == 2:
                basis = call.args[1]
                if not isinstance(basis, ast.StringLit):
                    self.error(
                        "bad-basis",
                        basis.span,
                        "measurement basis must be a string literal",
                    )
                elif basis.value not in ("X", "Y", "Z"):
                    self.error(
                        "bad-basis",
                        basis.span,
                        f'measurement basis must be "X", "Y", or "Z", got "{basis.value}"',
                    )
            return "Result"
        if name == "free":
            self.check_call_args(call, ("Qubit",), scope)
            return "unit"
        if name == "set_timer":
            self.check_call_args(call, ("str", "int"), scope)
            return "unit"
        if name in ("update", "meas", "transfer"):
            self.check_call_args(call, SEND_FUNCTIONS[name], scope)
            return "message"
        self.error("unknown-name", call.span, f"unknown function {name}")
        return None

    def _type_variable_call(self, expr: ast.VariableCall, scope: _Scope) -> str | None:
        parts = expr.parts
        if not parts:
            return None
        head = parts[0]
        base = self.type_of(head, scope)
        for part in parts[1:]:
            if base is None:
                # Still type nested arguments for diagnostics.
                if isinstance(part, ast.FnCall):
                    for arg in part.args:
                        self.type_of(arg, scope)
                return None
            base = self._member(base, part, scope)
        return base

    def _member(
        self, base: str, part: ast.FnCall | ast.RepeaterIdent | ast.Ident, scope: _Scope
    ) -> str | None:
        if base == "vec[Repeater]":
            if isinstance(part, ast.FnCall) and part.name == "len":
                if part.args:
                    self.error("arity", part.span, "len() takes no arguments")
                return "int"
            name = part.name if hasattr(part, "name") else "?"
            self.error("unknown-method", part.span, f"repeaters vector has no method {name}")
            return None
        if base == "Repeater":
            if isinstance(part, ast.FnCall) and part.name == "hop":
                if len(part.args) != 1:
                    self.error("arity", part.span, "hop() takes one integer argument")
                for arg in part.args:
                    arg_type = self.type_of(arg, scope)
                    if arg_type is not None and arg_type not in _NUMERIC:
                        self.error(
                            "type-mismatch",
                            arg.span,
                            f"hop() takes an integer offset, got {arg_type}",
                        )
                return "Repeater"
            name = part.name if hasattr(part, "name") else "?"
            self.error("unknown-method", part.span, f"Repeater has no method {name}")
            return None
        if base == "Message":
            if isinstance(part, ast.Ident) and part.name == "result":
                return "Result"
            name = part.name if hasattr(part, "name") else "?"
            self.error("unknown-method", part.span, f"Message has no field {name}")
            return None
        name = part.name if hasattr(part, "name") else "?"
        self.error("unknown-method", part.span, f"{base} has no member {name}")
        return None


def _compatible(expected: str, actual: str) -> bool:
    if expected == actual:
        return True
    if expected in _NUMERIC and actual in _NUMERIC:
        # Floats do not silently become integers.
        return not (expected in ("int", "u_int") and actual == "float")
    # A stored Result satisfies a str slot (message payloads carry text).
    if expected == "str" and actual == "Result":
        return True
    return False


def analyze(program: ast.Program) -> Analysis:
    """Run name/type checks over a parsed program."""
    return _Checker(program).run()


def check_dataflow(analysis: Analysis) -> list[Diagnostic]:
    """Set-before-get ordering and promoted-qubit plumbing over the ruleset body."""
    diagnostics: list[Diagnostic] = []
    program = analysis.program

    rule_sets: dict[str, set[str]] = {}
    for name, _ in analysis.signatures.items():
        rule_sets[name] = set()
    for produced, (rule_name, _) in analysis.producers.items():
        rule_sets.setdefault(rule_name, set()).add(produced)

    # Walk rule calls in textual order, tracking what has been produced.
    produced: set[str] = set()
    reported: set[int] = set()

    def visit_call(rule_name: str) -> None:
        for consumed, span in analysis.consumers.get(rule_name, []):
            if consumed not in produced:
                key = id(span)
                if key in reported:
                    continue
                reported.add(key)
                if consumed in analysis.producers:
                    diagnostics.append(
                        Diagnostic(
                            SEVERITY_ERROR,
                            "get-before-set",
                            span,
                            f"{consumed} is read before any earlier rule sets it",
                        )
                    )
                else:
                    diagnostics.append(
                        Diagnostic(
                            SEVERITY_ERROR, "get-before-set", span, f"{consumed} is never set"
                        )
                    )
        produced.update(rule_sets.get(rule_name, set()))

    qubit_lets: list[tuple[str, ast.Span, bool]] = []  # (name, span, maybe)
    used_names: set[str] = set()

    def scan_expr(expr: ast.Expr) -> None:
        if isinstance(expr, (ast.Ident, ast.NegIdent)):
            used_names.add(expr.name)
        elif isinstance(expr, ast.RuleCall):
            scan_expr(expr.repeater.index)
            for arg in expr.args:
                scan_expr(arg)
        elif isinstance(expr, ast.RepeaterCall):
            scan_expr(expr.index)
        elif isinstance(expr, ast.FnCall):
            for arg in expr.args:
                scan_expr(arg)
        elif isinstance(expr, ast.VariableCall):
            for part in expr.parts:
                if isinstance(part, ast.FnCall):
                    for arg in part.args:
                        scan_expr(arg)
        elif isinstance(expr, ast.CompExpr):
            scan_expr(expr.lhs)
            scan_expr(expr.rhs)
        elif isinstance(expr, ast.TermExpr):
            for operand in expr.operands:
                scan_expr(operand)
        elif isinstance(expr, (ast.VectorLit, ast.TupleLit)):
            for item in expr.items:
                scan_expr(item)

    def visit_stmt(stmt: ast.Stmt) -> None:
        if isinstance(stmt, ast.LetStmt):
            if isinstance(stmt.value, ast.RuleCall):
                visit_call(stmt.value.name)
                scan_expr(stmt.value)
                sig = analysis.signatures.get(stmt.value.name)
                for i, target in enumerate(stmt.targets):
                    declared = (
                        str(target.type_annotation) if target.type_annotation else None
                    )
                    maybe = bool(sig and i < len(sig.maybe_flags) and sig.maybe_flags[i])
                    if declared == "Qubit":
                        qubit_lets.append((target.name, target.span, maybe))
            else:
                scan_expr(stmt.value)
        elif isinstance(stmt, ast.ExprStmt):
            if isinstance(stmt.expr, ast.RuleCall):
                visit_call(stmt.expr.name)
            scan_expr(stmt.expr)
        elif isinstance(stmt, ast.ForStmt):
            if not isinstance(stmt.generator, ast.Series):
                scan_expr(stmt.generator)
            else:
                scan_expr(stmt.generator.stop)
            for inner in stmt.body:
                visit_stmt(inner)
        elif isinstance(stmt, ast.IfStmt):
            for cond, body in stmt.branches:
                scan_expr(cond)
                for inner in body:
                    visit_stmt(inner)
            if stmt.orelse is not None:
                for inner in stmt.orelse:
                    visit_stmt(inner)

    if program.ruleset is not None:
        for stmt in program.ruleset.stmts:
            visit_stmt(stmt)
    else:
        # Without a ruleset body there is no call order; flag gets that can
        # never be satisfied because the name is set nowhere at all.
        for rule_name, gets in analysis.consumers.items():
            for consumed, span in gets:
                if consumed not in analysis.producers:
                    diagnostics.append(
                        Diagnostic(
                            SEVERITY_ERROR, "get-before-set", span, f"{consumed} is never set"
                        )
                    )

    for name, span, maybe in qubit_lets:
        if not maybe and name not in used_names:
            diagnostics.append(
                Diagnostic(
                    SEVERITY_WARNING,
                    "unused-promoted",
                    span,
                    f"unused promoted qubit {name}",
                )
            )
    return diagnostics


def analyze_program(program: ast.Program) -> Analysis:
    """analyze() plus the ruleset-order dataflow pass."""
    analysis = analyze(program)
    analysis.diagnostics.extend(check_dataflow(analysis))
    return analysis


def resolve_imports(
    program: ast.Program,
    search_roots: list[Path],
    _visited: frozenset[Path] | None = None,
) -> tuple[ast.Program, list[Diagnostic]]:
    """Splice `import (rule)` definitions from files under the search roots."""
    diagnostics: list[Diagnostic] = []
    visited = _visited or frozenset()
    imported_rules: list[ast.RuleStmt] = []
    existing = {rule.name for rule in program.rules}

    for imp in program.imports:
        if not imp.is_rule:
            continue
        if imp.names:
            module_path, rule_names = imp.path, list(imp.names)
        else:
            module_path, rule_names = imp.path[:-1], [imp.path[-1]]
        if not module_path:
            diagnostics.append(
                Diagnostic(
                    SEVERITY_ERROR, "bad-import", imp.span, "rule import needs a module path"
                )
            )
            continue
        relative = Path(*module_path).with_suffix(".rula")
        found: Path | None = None
        for root in search_roots:
            candidate = (root / relative).resolve()
            if candidate.is_file():
                found = candidate
                break
        if found is None:
            diagnostics.append(
                Diagnostic(
                    SEVERITY_ERROR,
                    "bad-import",
                    imp.span,
                    f"module not found: {'::'.join(module_path)}",
                )
            )
            continue
        if found in visited:
            diagnostics.append(
                Diagnostic(
                    SEVERITY_ERROR,
                    "bad-import",
                    imp.span,
                    f"import cycle through {found.name}",
                )
            )
            continue
        try:
            module_program = parse(found.read_text(), filename=str(found))
        except ParseError as exc:
            diagnostics.append(
                Diagnostic(
                    SEVERITY_ERROR,
                    "bad-import",
                    imp.span,
                    f"cannot parse {found.name}: {exc}",
                )
            )
            continue
        module_program, nested = resolve_imports(
            module_program,
            [found.parent, *search_roots],
            visited | {found},
        )
        diagnostics.extend(nested)
        by_name = {rule.name: rule for rule in module_program.rules}
        for rule_name in rule_names:
            rule = by_name.get(rule_name)
            if rule is None:
                diagnostics.append(
                    Diagnostic(
                        SEVERITY_ERROR,
                        "bad-import",
                        imp.span,
                        f"{rule_name} is not defined in {'::'.join(module_path)}",
                    )
                )
                continue
            if rule_name in existing:
                diagnostics.append(
                    Diagnostic(
                        SEVERITY_ERROR,
                        "bad-import",
                        imp.span,
                        f"rule {rule_name} is already defined",
                    )
                )
                continue
            existing.add(rule_name)
            imported_rules.append(rule)

    if not imported_rules:
        return program, diagnostics
    merged = ast.Program(
        program.has_repeaters_decl,
        program.imports,
        tuple(imported_rules) + program.rules,
        program.ruleset,
        span=program.span,
    )
    return merged, diagnostics
