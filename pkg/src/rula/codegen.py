"""Lowering of analyzed programs to per-repeater RuleSets.

The ruleset block is executed at compile time against a concrete chain
topology: loops unroll, compile-time conditionals filter, and every rule
call instantiates one stage of expanded rules on the owning repeater.
Runtime conditionals (match over measurement results, if over message
fields) multiply a rule into sibling rules distinguished by Cmp clauses.
Message sends are split: the owner keeps a Send clause and the addressed
repeater either already declares a matching recv in a later rule or
receives a synthesized wait rule in a stage of its own.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

from . import ast, ir
from .analyzer import Diagnostic
from .config import ConfigError, Repeater, Topology

_GATE1 = {"x": "X", "y": "Y", "z": "Z", "h": "H"}
_GATE2 = {"cx": ("CxControl", "CxTarget"), "cz": ("CzControl", "CzTarget")}
_SEND_KIND = {"update": "Update", "meas": "Meas", "transfer": "Transfer", "free": "Free"}
_CMP_OP = {"==": "Eq", "!=": "Neq", "<": "Lt", "<=": "Leq", ">": "Gt", ">=": "Geq"}
_NEGATE = {"Eq": "Neq", "Neq": "Eq", "Lt": "Geq", "Geq": "Lt", "Gt": "Leq", "Leq": "Gt"}
_MIRROR = {"Eq": "Eq", "Neq": "Neq", "Lt": "Gt", "Gt": "Lt", "Leq": "Geq", "Geq": "Leq"}


@dataclass(frozen=True)
class Obligation:
    """One Send clause together with the Recv that will consume it."""

    kind: str
    from_addr: int
    to_addr: int
    receiver: str  # "rule <name>" or "synthesized <name>"


@dataclass
class CompiledOutput:
    ruleset_id: int
    name: str
    per_node: dict[int, ir.RuleSet]
    diagnostics: list[Diagnostic] = field(default_factory=list)
    obligations: list[Obligation] = field(default_factory=list)
    unbound_recvs: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not any(d.is_error for d in self.diagnostics)


def default_ruleset_id(program_name: str, config_bytes: bytes) -> int:
    """Reproducible 64-bit ruleset id from the program name and raw config."""
    digest = hashlib.sha256(program_name.encode() + b"\x00" + config_bytes).digest()
    return int.from_bytes(digest[:8], "big")


def write_output(out: CompiledOutput, out_dir: Path) -> list[Path]:
    """Write one <name>_<address>.json per repeater; serialize everything first
    so a failure cannot leave a partial set behind."""
    texts = [(addr, ir.serialize(rs)) for addr, rs in out.per_node.items()]
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for addr, text in texts:
        path = out_dir / f"{out.name}_{addr}.json"
        path.write_text(text, encoding="utf-8")
        paths.append(path)
    return paths


# --- evaluation values -------------------------------------------------------


@dataclass(frozen=True)
class QubitRef:
    """A qubit slot captured by a res clause or passed in as a promoted value."""

    index: int


@dataclass(frozen=True)
class ResultRef:
    """A measurement register produced by bsm()/measure() in this rule."""

    register: str


@dataclass(frozen=True)
class MessageRef:
    """The message captured by a recv clause."""

    capture: str


@dataclass(frozen=True)
class CorrectionRef:
    """A correction operator value such as z()."""

    op: str


@dataclass(frozen=True)
class PromotedHandle:
    """Ruleset-level handle to a qubit a rule promised to promote."""

    owner_index: int
    qubit_index: int
    maybe: bool = False


_REPEATERS_VEC = object()  # value of the bare '#repeaters' vector
_POISON = object()  # placeholder binding after an aborted rule call


class NotConst(Exception):
    """An expression that cannot be folded at compile time."""

    def __init__(self, reason: str, span: ast.Span):
        super().__init__(reason)
        self.reason = reason
        self.span = span


class LowerError(Exception):
    """A hard lowering fault; aborts the current rule call with a diagnostic."""

    def __init__(self, code: str, span: ast.Span, message: str):
        super().__init__(message)
        self.code = code
        self.span = span
        self.message = message


def _trunc_div(a, b, span: ast.Span):
    if b == 0:
        raise LowerError("const-expr", span, "division by zero in a compile-time expression")
    if isinstance(a, int) and isinstance(b, int):
        q = a // b
        if q < 0 and q * b != a:
            q += 1  # round toward zero, not toward -inf
        return q
    return a / b


def _trunc_mod(a, b, span: ast.Span):
    if b == 0:
        raise LowerError("const-expr", span, "modulo by zero in a compile-time expression")
    if isinstance(a, int) and isinstance(b, int):
        return a - _trunc_div(a, b, span) * b
    return math.fmod(a, b)


# --- expansion bookkeeping ---------------------------------------------------


@dataclass
class _SendRec:
    kind: str
    to_addr: int
    effect: tuple  # (kind,) or (kind, detail) used to dedupe synthesized rules
    span: ast.Span


@dataclass
class _Variant:
    """One sibling rule in the making while an act block is expanded."""

    env: dict
    cmps: list[ir.CmpClause] = field(default_factory=list)
    clauses: list = field(default_factory=list)
    promotes: list[int] = field(default_factory=list)
    sends: list[_SendRec] = field(default_factory=list)
    registers: int = 0
    frozen: bool = False  # otherwise lineage: no trailing statements
    otherwise: bool = False  # ordered after every literal-arm sibling

    def fork(self) -> "_Variant":
        return _Variant(
            env=dict(self.env),
            cmps=list(self.cmps),
            clauses=list(self.clauses),
            promotes=list(self.promotes),
            sends=list(self.sends),
            registers=self.registers,
            frozen=self.frozen,
            otherwise=self.otherwise,
        )

    def alloc_register(self) -> str:
        name = "MeasResult" if self.registers == 0 else f"MeasResult{self.registers}"
        self.registers += 1
        return name


@dataclass
class _CallRecord:
    idx: int
    rule_name: str
    owner: Repeater
    cond_clauses: list
    recv_froms: list[tuple[int, ast.Span]]  # hand-written recv partners
    variants: list[_Variant]

    def inspects_message(self) -> bool:
        return any(
            c.cmp_val.startswith("message.") for v in self.variants for c in v.cmps
        )


@dataclass
class _Slot:
    """A hand-written recv waiting to be paired with a send."""

    call_idx: int
    node_addr: int
    from_addr: int
    rule_name: str
    meas_only: bool
    bound: bool = False


@dataclass
class _Handler:
    """A synthesized partner-side wait rule, shared by equivalent sends."""

    kind: str
    effect: tuple
    from_addr: int
    bound_sends: int = 0


class _Compiler:
    def __init__(self, program: ast.Program, topology: Topology, ruleset_id: int, default_name: str):
        self.program = program
        self.topology = topology
        self.ruleset_id = ruleset_id
        self.name = program.ruleset.name if program.ruleset else default_name
        self.rules = {r.name: r for r in program.rules}
        self.calls: list[_CallRecord] = []
        self.diagnostics: list[Diagnostic] = []
        self._current_owner: Repeater | None = None

    def error(self, code: str, span: ast.Span, message: str) -> None:
        self.diagnostics.append(Diagnostic("error", code, span, message))

    # --- constant evaluation -------------------------------------------------

    def eval(self, expr, env: dict, strict: bool = False):
        """Fold an expression to a value.  In strict mode (ruleset-level control
        flow) only integers, loop variables, #repeaters.len(), arithmetic and
        comparisons are admitted."""
        if isinstance(expr, ast.IntLit):
            return expr.value
        if isinstance(expr, ast.BoolLit):
            return expr.value
        if isinstance(expr, ast.FloatLit):
            if strict:
                raise NotConst("floating-point values are only available at run time", expr.span)
            return expr.value
        if isinstance(expr, ast.StringLit):
            if strict:
                raise NotConst("string values are not compile-time integers", expr.span)
            return expr.value
        if isinstance(expr, ast.Ident):
            return self._lookup(expr.name, env, expr.span, strict)
        if isinstance(expr, ast.NegIdent):
            value = self._lookup(expr.name, env, expr.span, strict)
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise NotConst(f"{expr.name} is not numeric", expr.span)
            return -value
        if isinstance(expr, ast.RepeaterIdent):
            if expr.name == "#repeaters":
                if strict:
                    raise NotConst("the repeater vector is not an integer", expr.span)
                return _REPEATERS_VEC
            return self._lookup(expr.name, env, expr.span, strict)
        if isinstance(expr, ast.TupleLit) and len(expr.items) == 1:
            return self.eval(expr.items[0], env, strict)
        if isinstance(expr, ast.RepeaterCall):
            if strict:
                raise NotConst("repeater values are not compile-time integers", expr.span)
            return self._repeater_at(expr, env)
        if isinstance(expr, ast.VariableCall):
            return self._eval_chain(expr, env, strict)
        if isinstance(expr, ast.TermExpr):
            return self._eval_term(expr, env, strict)
        if isinstance(expr, ast.CompExpr):
            return self._eval_comparison(expr, env, strict)
        if isinstance(expr, ast.GetExpr):
            raise NotConst(f"get {expr.name} reads a run-time variable", expr.span)
        if isinstance(expr, ast.RuleCall):
            raise NotConst("rule results are run-time values", expr.span)
        raise NotConst("expression is not a compile-time constant", expr.span)

    def _lookup(self, name: str, env: dict, span: ast.Span, strict: bool):
        if name not in env:
            raise NotConst(f"{name} is not a compile-time constant", span)
        value = env[name]
        if value is _POISON:
            raise NotConst(f"{name} has no usable value after an earlier error", span)
        if isinstance(value, (QubitRef, ResultRef, MessageRef, PromotedHandle)):
            raise NotConst(f"{name} is bound to a run-time value", span)
        if strict and not isinstance(value, (int, bool)):
            raise NotConst(f"{name} is not a compile-time integer", span)
        return value

    def _repeater_at(self, expr: ast.RepeaterCall, env: dict) -> Repeater:
        index = self.eval(expr.index, env)
        if not isinstance(index, int) or isinstance(index, bool):
            raise NotConst("repeater index is not an integer", expr.span)
        try:
            return self.topology.at(index)
        except ConfigError as exc:
            raise LowerError("repeater-range", expr.span, str(exc)) from exc

    def _eval_chain(self, expr: ast.VariableCall, env: dict, strict: bool):
        parts = expr.parts
        # The single strict-mode chain: #repeaters.len()
        if (
            len(parts) == 2
            and isinstance(parts[0], ast.RepeaterIdent)
            and parts[0].name == "#repeaters"
            and isinstance(parts[1], ast.FnCall)
            and parts[1].name == "len"
        ):
            return self.topology.count
        if strict:
            raise NotConst("only #repeaters.len() may be called at the ruleset level", expr.span)
        current = self.eval(parts[0], env)
        for part in parts[1:]:
            if isinstance(part, ast.FnCall):
                if part.name == "len" and current is _REPEATERS_VEC:
                    current = self.topology.count
                    continue
                if part.name == "hop" and isinstance(current, Repeater):
                    if len(part.args) != 1:
                        raise NotConst("hop takes one offset argument", part.span)
                    offset = self.eval(part.args[0], env)
                    if not isinstance(offset, int) or isinstance(offset, bool):
                        raise NotConst("hop offset is not an integer", part.span)
                    try:
                        current = self.topology.hop(current.index, offset)
                    except ConfigError as exc:
                        raise LowerError("hop-range", expr.span, str(exc)) from exc
                    continue
                raise NotConst(f"method {part.name} has no compile-time value", part.span)
            if isinstance(part, ast.Ident) and isinstance(current, MessageRef):
                raise NotConst("message fields are run-time values", expr.span)
            raise NotConst("expression is not a compile-time constant", expr.span)
        return current

    def _eval_term(self, expr: ast.TermExpr, env: dict, strict: bool):
        values = [self.eval(op, env, strict) for op in expr.operands]
        for value in values:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise NotConst("arithmetic over non-numeric operands", expr.span)
        ops = list(expr.ops)
        # Ordinary precedence over the flat operator chain, left-to-right
        # within each level.
        for level in (("^",), ("*", "/", "%"), ("+", "-")):
            i = 0
            while i < len(ops):
                if ops[i] not in level:
                    i += 1
                    continue
                a, b, op = values[i], values[i + 1], ops[i]
                if op == "+":
                    r = a + b
                elif op == "-":
                    r = a - b
                elif op == "*":
                    r = a * b
                elif op == "/":
                    r = _trunc_div(a, b, expr.span)
                elif op == "%":
                    r = _trunc_mod(a, b, expr.span)
                else:
                    if isinstance(b, int) and b < 0:
                        raise LowerError(
                            "const-expr", expr.span, "negative exponent in a compile-time expression"
                        )
                    r = a**b
                values[i : i + 2] = [r]
                del ops[i]
        return values[0]

    def _eval_comparison(self, expr: ast.CompExpr, env: dict, strict: bool) -> bool:
        lhs = self.eval(expr.lhs, env, strict)
        rhs = self.eval(expr.rhs, env, strict)
        for side in (lhs, rhs):
            if isinstance(side, Repeater) or side is _REPEATERS_VEC:
                raise NotConst("repeater values cannot be compared at compile time", expr.span)
        numeric = lambda v: isinstance(v, (int, float)) and not isinstance(v, bool)
        if type(lhs) is not type(rhs) and not (numeric(lhs) and numeric(rhs)):
            raise NotConst("comparison over mismatched compile-time types", expr.span)
        op = expr.op
        if op == "==":
            return lhs == rhs
        if op == "!=":
            return lhs != rhs
        if op == "<":
            return lhs < rhs
        if op == "<=":
            return lhs <= rhs
        if op == ">":
            return lhs > rhs
        return lhs >= rhs

    # --- ruleset body --------------------------------------------------------

    def run(self) -> CompiledOutput:
        env: dict = {}
        if self.program.ruleset is not None:
            self._exec_stmts(self.program.ruleset.stmts, env)
        obligations, unbound, handler_stages = self._resolve_sends()
        per_node = self._assemble(handler_stages)
        return CompiledOutput(
            ruleset_id=self.ruleset_id,
            name=self.name,
            per_node=per_node,
            diagnostics=self.diagnostics,
            obligations=obligations,
            unbound_recvs=unbound,
        )

    def _exec_stmts(self, stmts, env: dict) -> None:
        for stmt in stmts:
            if isinstance(stmt, ast.LetStmt):
                self._exec_let(stmt, env)
            elif isinstance(stmt, ast.ForStmt):
                self._exec_for(stmt, env)
            elif isinstance(stmt, ast.IfStmt):
                self._exec_if(stmt, env)
            elif isinstance(stmt, ast.ExprStmt):
                if isinstance(stmt.expr, ast.RuleCall):
                    self._instantiate(stmt.expr, env)
                # other bare expressions have no compile-time effect
            else:
                # promote/set/send/match at the ruleset level; the analyzer
                # already rejected these, skip defensively
                self.error(
                    "unsupported-stmt",
                    stmt.span,
                    f"{type(stmt).__name__} cannot appear in a ruleset block",
                )

    def _exec_let(self, stmt: ast.LetStmt, env: dict) -> None:
        if isinstance(stmt.value, ast.RuleCall):
            handles = self._instantiate(stmt.value, env)
            for target, handle in zip(stmt.targets, handles):
                env[target.name] = handle if handle is not None else _POISON
            return
        try:
            value = self.eval(stmt.value, env)
        except NotConst as nc:
            self.error(
                "const-expr",
                nc.span,
                f"ruleset-level let requires a compile-time or promoted value: {nc.reason}",
            )
            for target in stmt.targets:
                env[target.name] = _POISON
            return
        except LowerError as err:
            self.error(err.code, err.span, err.message)
            for target in stmt.targets:
                env[target.name] = _POISON
            return
        env[stmt.targets[0].name] = value

    def _exec_for(self, stmt: ast.ForStmt, env: dict) -> None:
        if len(stmt.names) != 1:
            self.error("unsupported-stmt", stmt.span, "loop destructuring is not supported")
            return
        name = stmt.names[0]
        if isinstance(stmt.generator, ast.Series):
            try:
                stop = self.eval(stmt.generator.stop, env, strict=True)
            except NotConst as nc:
                self.error(
                    "const-expr",
                    nc.span,
                    f"loop bound is not compile-time evaluable: {nc.reason}",
                )
                return
            except LowerError as err:
                self.error(err.code, err.span, err.message)
                return
            if isinstance(stop, bool) or not isinstance(stop, int):
                self.error("const-expr", stmt.generator.span, "loop bound is not an integer")
                return
            values = range(stmt.generator.start, stop + 1)
        elif isinstance(stmt.generator, ast.VectorLit):
            try:
                values = [self.eval(item, env) for item in stmt.generator.items]
            except (NotConst, LowerError):
                self.error("const-expr", stmt.generator.span, "vector items must be literals")
                return
        else:
            self.error("const-expr", stmt.span, "loop generator must be a series or a vector")
            return
        for value in values:
            scoped = dict(env)
            scoped[name] = value
            self._exec_stmts(stmt.body, scoped)
            # rebind promoted handles created in the body? they are loop-local

    def _exec_if(self, stmt: ast.IfStmt, env: dict) -> None:
        for condition, body in stmt.branches:
            try:
                value = self.eval(condition, env, strict=True)
            except NotConst as nc:
                self.error(
                    "const-expr",
                    condition.span,
                    f"ruleset-level if condition is not compile-time evaluable: {nc.reason}",
                )
                return
            except LowerError as err:
                self.error(err.code, err.span, err.message)
                return
            if not isinstance(value, bool):
                self.error(
                    "const-expr",
                    condition.span,
                    "ruleset-level if condition does not evaluate to a boolean",
                )
                return
            if value:
                self._exec_stmts(body, env)
                return
        if stmt.orelse is not None:
            self._exec_stmts(stmt.orelse, env)

    # --- rule instantiation --------------------------------------------------

    def _instantiate(self, call: ast.RuleCall, env: dict) -> tuple:
        rule = self.rules.get(call.name)
        if rule is None:
            self.error("unknown-rule", call.span, f"rule {call.name} is not defined")
            return (None,)
        poison = tuple(None for _ in rule.return_types) or (None,)
        try:
            owner = self._repeater_at(call.repeater, env)
        except NotConst as nc:
            self.error("const-expr", nc.span, f"repeater selector is not compile-time: {nc.reason}")
            return poison
        except LowerError as err:
            self.error(err.code, err.span, err.message)
            return poison
        args = []
        for arg in call.args:
            if isinstance(arg, ast.Ident) and isinstance(env.get(arg.name), PromotedHandle):
                args.append(env[arg.name])
                continue
            if isinstance(arg, ast.Ident) and env.get(arg.name) is _POISON:
                return poison  # cascade from an earlier failure, already reported
            try:
                args.append(self.eval(arg, env))
            except NotConst as nc:
                self.error("const-expr", nc.span, f"call argument is not compile-time: {nc.reason}")
                return poison
            except LowerError as err:
                self.error(err.code, err.span, err.message)
                return poison
        try:
            return self._expand_rule(rule, owner, args, call.span)
        except NotConst as nc:
            self.error("const-expr", nc.span, nc.reason)
            return poison
        except LowerError as err:
            self.error(err.code, err.span, err.message)
            return poison

    def _expand_rule(self, rule: ast.RuleStmt, owner: Repeater, args: list, span: ast.Span) -> tuple:
        self._current_owner = owner
        env: dict = {rule.repeater_param: owner}
        for param, arg in zip(rule.params, args):
            if isinstance(arg, PromotedHandle):
                if arg.owner_index != owner.index:
                    raise LowerError(
                        "promote-owner",
                        span,
                        f"promoted qubit from repeater index {arg.owner_index} "
                        f"used on repeater index {owner.index}",
                    )
                env[param.name] = QubitRef(arg.qubit_index)
            else:
                env[param.name] = arg
        for let in rule.lets:
            env[let.targets[0].name] = self.eval(let.value, env)

        cond_clauses, recv_froms = self._lower_cond(rule.cond, env, owner)
        base = _Variant(env=env)
        variants = self._expand_stmts(list(rule.act.stmts) + list(rule.trailing), base)
        variants = [v for v in variants if not v.otherwise] + [v for v in variants if v.otherwise]

        record = _CallRecord(
            idx=len(self.calls),
            rule_name=rule.name,
            owner=owner,
            cond_clauses=cond_clauses,
            recv_froms=recv_froms,
            variants=variants,
        )
        self.calls.append(record)

        if not rule.return_types:
            return (None,)
        promoting = next((v for v in variants if v.promotes), None)
        if promoting is None:
            return tuple(None for _ in rule.return_types)
        handles = []
        for i, ret in enumerate(rule.return_types):
            if i < len(promoting.promotes):
                handles.append(PromotedHandle(owner.index, promoting.promotes[i], ret.maybe))
            else:
                handles.append(None)
        return tuple(handles)

    # --- condition lowering --------------------------------------------------

    def _lower_cond(self, cond: ast.CondExpr, env: dict, owner: Repeater):
        clauses: list = []
        recv_froms: list[tuple[int, ast.Span]] = []
        used_indices: set[int] = set()
        for clause in cond.clauses:
            call = clause.call
            if not isinstance(call, ast.FnCall):
                raise LowerError("bad-cond-clause", clause.span, "condition clause is not a call")
            if call.name == "res":
                count = self.eval(call.args[0], env)
                fidelity = self.eval(call.args[1], env)
                partner = self.eval(call.args[2], env)
                if not isinstance(partner, Repeater):
                    raise LowerError("type-mismatch", call.args[2].span, "res partner is not a repeater")
                if len(call.args) >= 4:
                    index = self.eval(call.args[3], env)
                else:
                    index = next(i for i in range(len(used_indices) + 1) if i not in used_indices)
                used_indices.add(index)
                clauses.append(
                    ir.ResClause(
                        count=int(count),
                        fidelity=float(fidelity),
                        partner_addr=partner.address,
                        qubit_index=int(index),
                    )
                )
                if clause.capture:
                    env[clause.capture] = QubitRef(int(index))
            elif call.name == "recv":
                partner = self.eval(call.args[0], env)
                if not isinstance(partner, Repeater):
                    raise LowerError("type-mismatch", call.args[0].span, "recv partner is not a repeater")
                clauses.append(ir.RecvClause(partner_addr=partner.address))
                recv_froms.append((partner.address, clause.span))
                if clause.capture:
                    env[clause.capture] = MessageRef(clause.capture)
            elif call.name == "cmp":
                clauses.append(self._lower_cmp_call(call, env))
            elif call.name == "check_timer":
                timer_id = self.eval(call.args[0], env)
                clauses.append(ir.TimerClause(timer_id=str(timer_id)))
            else:
                raise LowerError("bad-cond-clause", call.span, f"unknown condition clause {call.name}")
        return clauses, recv_froms

    def _lower_cmp_call(self, call: ast.FnCall, env: dict) -> ir.CmpClause:
        subject = call.args[0]
        if isinstance(subject, ast.GetExpr):
            cmp_val = subject.name
        elif isinstance(subject, ast.Ident) and isinstance(env.get(subject.name), ResultRef):
            cmp_val = env[subject.name].register
        else:
            raise LowerError("bad-cond-clause", subject.span, "cmp subject is not a comparable value")
        operator = self.eval(call.args[1], env)
        if operator not in _CMP_OP:
            raise LowerError("bad-cond-clause", call.args[1].span, f"unknown operator {operator!r}")
        target = self.eval(call.args[2], env)
        return ir.CmpClause(cmp_val, _CMP_OP[str(operator)], ir.TaggedValue("Str", str(target)))

    # --- act expansion -------------------------------------------------------

    def _expand_stmts(self, stmts, variant: _Variant) -> list[_Variant]:
        variants = [variant]
        for stmt in stmts:
            advanced: list[_Variant] = []
            for v in variants:
                if v.frozen:
                    advanced.append(v)
                else:
                    advanced.extend(self._apply_stmt(stmt, v))
            variants = advanced
        return variants

    def _apply_stmt(self, stmt, v: _Variant) -> list[_Variant]:
        if isinstance(stmt, ast.LetStmt):
            self._apply_let(stmt, v)
            return [v]
        if isinstance(stmt, ast.ExprStmt):
            self._apply_call_stmt(stmt.expr, v)
            return [v]
        if isinstance(stmt, ast.SendStmt):
            self._apply_send(stmt, v)
            return [v]
        if isinstance(stmt, ast.PromoteStmt):
            for value in stmt.values:
                qubit = self._qubit(value, v)
                v.clauses.append(ir.PromoteClause(qubit))
                v.promotes.append(qubit.qubit_index)
            return [v]
        if isinstance(stmt, ast.SetStmt):
            source = v.env.get(stmt.name)
            variable = source.register if isinstance(source, ResultRef) else stmt.name
            v.clauses.append(ir.SetClause(variable=variable, alias=stmt.alias))
            return [v]
        if isinstance(stmt, ast.MatchStmt):
            return self._apply_match(stmt, v)
        if isinstance(stmt, ast.IfStmt):
            return self._apply_if(stmt, v)
        raise LowerError(
            "unsupported-stmt", stmt.span, f"{type(stmt).__name__} cannot appear in an act block"
        )

    def _apply_let(self, stmt: ast.LetStmt, v: _Variant) -> None:
        value = stmt.value
        name = stmt.targets[0].name
        if isinstance(value, ast.FnCall) and value.name == "bsm":
            a = self._qubit(value.args[0], v)
            b = self._qubit(value.args[1], v)
            register = v.alloc_register()
            v.clauses.append(ir.QCircClause((ir.QGate(a, "CxControl"), ir.QGate(b, "CxTarget"))))
            v.clauses.append(ir.MeasureClause(a, "X"))
            v.clauses.append(ir.MeasureClause(b, "Z"))
            v.env[name] = ResultRef(register)
            return
        if isinstance(value, ast.FnCall) and value.name == "measure":
            qubit = self._qubit(value.args[0], v)
            basis = self.eval(value.args[1], v.env)
            if basis not in ir.MEASURE_BASES:
                raise LowerError("bad-basis", value.args[1].span, f"unknown basis {basis}")
            register = v.alloc_register()
            v.clauses.append(ir.MeasureClause(qubit, str(basis)))
            v.env[name] = ResultRef(register)
            return
        if isinstance(value, ast.FnCall) and value.name in _GATE1 and not value.args:
            v.env[name] = CorrectionRef(_GATE1[value.name])
            return
        v.env[name] = self.eval(value, v.env)

    def _apply_call_stmt(self, expr, v: _Variant) -> None:
        if not isinstance(expr, ast.FnCall):
            raise LowerError("unsupported-stmt", expr.span, "expression statement has no effect")
        if expr.name in _GATE1 and expr.args:
            v.clauses.append(ir.QCircClause((ir.QGate(self._qubit(expr.args[0], v), _GATE1[expr.name]),)))
            return
        if expr.name in _GATE2:
            control, target = _GATE2[expr.name]
            v.clauses.append(
                ir.QCircClause(
                    (
                        ir.QGate(self._qubit(expr.args[0], v), control),
                        ir.QGate(self._qubit(expr.args[1], v), target),
                    )
                )
            )
            return
        if expr.name in ("measure", "bsm"):
            # result discarded; lower through the let path with a throwaway name
            fake = ast.LetStmt(targets=(ast.TypedName(name="_"),), value=expr, span=expr.span)
            self._apply_let(fake, v)
            v.env.pop("_", None)
            return
        if expr.name == "free":
            v.clauses.append(ir.FreeClause(self._qubit(expr.args[0], v)))
            return
        if expr.name == "set_timer":
            timer_id = self.eval(expr.args[0], v.env)
            duration = self.eval(expr.args[1], v.env)
            v.clauses.append(ir.SetTimerClause(str(timer_id), int(duration)))
            return
        if expr.name in _SEND_KIND:
            raise LowerError(
                "bad-action", expr.span, f"{expr.name}(...) must be sent to a repeater with ->"
            )
        raise LowerError("unknown-name", expr.span, f"unknown operation {expr.name}")

    def _apply_send(self, stmt: ast.SendStmt, v: _Variant) -> None:
        call = stmt.call
        kind = _SEND_KIND.get(call.name)
        if kind is None:
            raise LowerError(
                "bad-send",
                call.span,
                f"send requires one of update/free/meas/transfer, got {call.name}",
            )
        destination = self.eval(stmt.destination, v.env)
        if not isinstance(destination, Repeater):
            raise LowerError("bad-send", stmt.destination.span, "send destination must be a repeater")
        if destination.address == self._current_owner.address:
            raise LowerError("send-self", stmt.destination.span, "message sent to the owner itself")
        qubit = self._qubit(call.args[0], v)
        if kind == "Update":
            op = self._correction(call.args[1], v)
            payload = (("op", op), ("qubit", str(qubit.qubit_index)))
            effect = ("Update", op)
        elif kind == "Meas":
            source = call.args[1]
            register = None
            if isinstance(source, ast.Ident) and isinstance(v.env.get(source.name), ResultRef):
                register = v.env[source.name].register
            if register is None:
                raise LowerError("bad-send", source.span, "meas payload is not a measurement result")
            payload = (("qubit", str(qubit.qubit_index)), ("result", register))
            effect = ("Meas", register)
        else:  # Transfer / Free
            payload = (("qubit", str(qubit.qubit_index)),)
            effect = (kind,)
        v.clauses.append(ir.SendClause(kind, destination.address, payload))
        v.sends.append(_SendRec(kind, destination.address, effect, stmt.span))

    def _correction(self, expr, v: _Variant) -> str:
        if isinstance(expr, ast.FnCall) and expr.name in _GATE1 and not expr.args:
            return _GATE1[expr.name]
        if isinstance(expr, ast.Ident) and isinstance(v.env.get(expr.name), CorrectionRef):
            return v.env[expr.name].op
        raise LowerError("bad-send", expr.span, "update payload is not a correction operator")

    def _qubit(self, expr, v: _Variant) -> ir.QubitId:
        if isinstance(expr, ast.Ident):
            value = v.env.get(expr.name)
            if isinstance(value, QubitRef):
                return ir.QubitId(value.index)
        raise LowerError("type-mismatch", expr.span, "operand does not name a captured qubit")

    # --- runtime conditionals ------------------------------------------------

    def _apply_match(self, stmt: ast.MatchStmt, v: _Variant) -> list[_Variant]:
        try:
            subject = self.eval(stmt.subject, v.env)
        except (NotConst, LowerError):
            subject = None
        if subject is not None:
            return self._fold_match(stmt, subject, v)

        out: list[_Variant] = []
        for arm in stmt.arms:
            child = v.fork()
            child.cmps.append(self._match_cmp(stmt.subject, arm.pattern, child))
            out.extend(self._expand_stmts(arm.body, child))
        if stmt.otherwise is not None:
            child = v.fork()
            child.otherwise = True
            for expanded in self._expand_stmts(stmt.otherwise, child):
                expanded.frozen = True
                expanded.otherwise = True
                out.append(expanded)
        return out

    def _fold_match(self, stmt: ast.MatchStmt, subject, v: _Variant) -> list[_Variant]:
        for arm in stmt.arms:
            try:
                pattern = self.eval(arm.pattern, v.env)
            except (NotConst, LowerError):
                raise LowerError("bad-match", arm.pattern.span, "match arm is not a literal")
            if pattern == subject:
                return self._expand_stmts(arm.body, v)
        if stmt.otherwise is not None:
            return self._expand_stmts(stmt.otherwise, v)
        return [v]

    def _match_cmp(self, subject, pattern, v: _Variant) -> ir.CmpClause:
        if isinstance(subject, ast.CompExpr):
            if not isinstance(pattern, ast.BoolLit):
                raise LowerError(
                    "bad-match", pattern.span, "arms of a comparison match must be true or false"
                )
            cmp = self._lower_comparison(subject, v)
            if pattern.value:
                return cmp
            return ir.CmpClause(cmp.cmp_val, _NEGATE[cmp.operator], cmp.target_val)
        cmp_val, kind = self._runtime_operand(subject, v)
        value = self._pattern_text(pattern, v)
        return ir.CmpClause(cmp_val, "Eq", ir.TaggedValue(kind, value))

    def _pattern_text(self, pattern, v: _Variant) -> str:
        try:
            value = self.eval(pattern, v.env)
        except (NotConst, LowerError):
            raise LowerError("bad-match", pattern.span, "match arm is not a literal")
        if isinstance(value, bool):
            return "true" if value else "false"
        return str(value)

    def _runtime_operand(self, expr, v: _Variant) -> tuple[str, str]:
        """Name a runtime-comparable value: (cmp_val, the kind its targets carry)."""
        if isinstance(expr, ast.Ident):
            value = v.env.get(expr.name)
            if isinstance(value, ResultRef):
                return value.register, value.register
        if isinstance(expr, ast.VariableCall) and len(expr.parts) == 2:
            head, fieldpart = expr.parts
            if (
                isinstance(head, ast.Ident)
                and isinstance(v.env.get(head.name), MessageRef)
                and isinstance(fieldpart, ast.Ident)
            ):
                return f"message.{fieldpart.name}", "Str"
        if isinstance(expr, ast.GetExpr):
            return expr.name, "Str"
        raise LowerError(
            "bad-match",
            expr.span,
            "runtime conditions may only inspect measurement results, message fields "
            "and stored variables",
        )

    def _apply_if(self, stmt: ast.IfStmt, v: _Variant) -> list[_Variant]:
        # Compile-time conditions fold; runtime conditions expand into
        # Cmp-guarded siblings, with each later branch carrying the negations
        # of every branch before it.
        first_cond = stmt.branches[0][0]
        try:
            folded = self.eval(first_cond, v.env)
        except (NotConst, LowerError):
            folded = None
        if folded is not None:
            for condition, body in stmt.branches:
                value = self.eval(condition, v.env)
                if not isinstance(value, bool):
                    raise LowerError("const-expr", condition.span, "if condition is not a boolean")
                if value:
                    return self._expand_stmts(body, v)
            if stmt.orelse is not None:
                return self._expand_stmts(stmt.orelse, v)
            return [v]

        out: list[_Variant] = []
        negations: list[ir.CmpClause] = []
        for condition, body in stmt.branches:
            cmp = self._lower_comparison(condition, v)
            child = v.fork()
            child.cmps.extend(negations + [cmp])
            out.extend(self._expand_stmts(body, child))
            negations.append(ir.CmpClause(cmp.cmp_val, _NEGATE[cmp.operator], cmp.target_val))
        child = v.fork()
        child.cmps.extend(negations)
        if stmt.orelse is not None:
            out.extend(self._expand_stmts(stmt.orelse, child))
        else:
            out.append(child)
        return out

    def _lower_comparison(self, expr, v: _Variant) -> ir.CmpClause:
        if not isinstance(expr, ast.CompExpr):
            raise LowerError("bad-match", expr.span, "runtime condition must be a comparison")
        operator = _CMP_OP[expr.op]
        try:
            cmp_val, kind = self._runtime_operand(expr.lhs, v)
            target = self._comparison_target(expr.rhs, kind, v)
        except LowerError:
            # literal on the left: mirror the comparison
            cmp_val, kind = self._runtime_operand(expr.rhs, v)
            target = self._comparison_target(expr.lhs, kind, v)
            operator = _MIRROR[operator]
        return ir.CmpClause(cmp_val, operator, target)

    def _comparison_target(self, expr, kind: str, v: _Variant) -> ir.TaggedValue:
        if isinstance(expr, ast.GetExpr):
            return ir.TaggedValue("Variable", expr.name)
        if isinstance(expr, ast.Ident) and isinstance(v.env.get(expr.name), ResultRef):
            return ir.TaggedValue("Variable", v.env[expr.name].register)
        try:
            value = self.eval(expr, v.env)
        except NotConst as nc:
            raise LowerError("bad-match", nc.span, f"comparison target is not lowerable: {nc.reason}")
        if isinstance(value, bool):
            return ir.TaggedValue("Bool", "true" if value else "false")
        if isinstance(value, int):
            return ir.TaggedValue("Int", str(value))
        if isinstance(value, str):
            return ir.TaggedValue(kind if kind != "Str" else "Str", value)
        raise LowerError("bad-match", expr.span, "comparison target is not lowerable")

    # --- send resolution and assembly ---------------------------------------

    def _resolve_sends(self):
        slots: list[_Slot] = []
        for call in self.calls:
            for from_addr, _span in call.recv_froms:
                slots.append(
                    _Slot(
                        call_idx=call.idx,
                        node_addr=call.owner.address,
                        from_addr=from_addr,
                        rule_name=call.rule_name,
                        meas_only=call.inspects_message(),
                    )
                )

        obligations: list[Obligation] = []
        handler_stages: dict[tuple[int, int], dict[tuple, _Handler]] = {}
        for call in self.calls:
            from_addr = call.owner.address
            for v in call.variants:
                for send in v.sends:
                    slot = next(
                        (
                            s
                            for s in slots
                            if not s.bound
                            and s.node_addr == send.to_addr
                            and s.from_addr == from_addr
                            and (send.kind == "Meas" or not s.meas_only)
                        ),
                        None,
                    )
                    if slot is not None:
                        slot.bound = True
                        obligations.append(
                            Obligation(send.kind, from_addr, send.to_addr, f"rule {slot.rule_name}")
                        )
                        continue
                    stage_key = (call.idx, send.to_addr)
                    handlers = handler_stages.setdefault(stage_key, {})
                    handler = handlers.get(send.effect)
                    if handler is None:
                        handler = _Handler(send.kind, send.effect, from_addr)
                        handlers[send.effect] = handler
                    handler.bound_sends += 1
                    obligations.append(
                        Obligation(
                            send.kind,
                            from_addr,
                            send.to_addr,
                            f"synthesized wait_{send.kind.lower()}",
                        )
                    )

        unbound = [
            f"recv from address {s.from_addr} in rule {s.rule_name} "
            f"on address {s.node_addr} never receives a send"
            for s in slots
            if not s.bound
        ]
        return obligations, unbound, handler_stages

    def _handler_rule(self, handler: _Handler) -> tuple[str, list, list]:
        condition = [
            ir.RecvClause(partner_addr=handler.from_addr),
            ir.CmpClause("MessageKind", "Eq", ir.TaggedValue("MessageKind", handler.kind)),
        ]
        # Handler actions address qubit 0: the resource carried by the message.
        slot = ir.QubitId(0)
        if handler.kind == "Update":
            action = [ir.QCircClause((ir.QGate(slot, handler.effect[1]),))]
        elif handler.kind == "Free":
            action = [ir.FreeClause(slot)]
        elif handler.kind == "Transfer":
            action = [ir.PromoteClause(slot)]
        else:  # Meas
            action = [ir.SetClause(variable="message.result", alias=handler.effect[1])]
        return f"wait_{handler.kind.lower()}", condition, action

    def _assemble(self, handler_stages) -> dict[int, ir.RuleSet]:
        per_node: dict[int, ir.RuleSet] = {}
        for repeater in self.topology.repeaters:
            stages: list[ir.Stage] = []
            rule_id = 0
            shared_tag = 0
            for call in self.calls:
                if call.owner.address == repeater.address and call.variants:
                    rules = []
                    for v in call.variants:
                        rules.append(
                            ir.Rule(
                                name=call.rule_name,
                                id=rule_id,
                                shared_tag=shared_tag,
                                condition=ir.Condition(None, tuple(call.cond_clauses) + tuple(v.cmps)),
                                action=ir.Action(None, tuple(v.clauses)),
                            )
                        )
                        rule_id += 1
                    shared_tag += 1
                    stages.append(ir.Stage(tuple(rules)))
                handlers = handler_stages.get((call.idx, repeater.address))
                if handlers:
                    rules = []
                    for handler in handlers.values():
                        name, condition, action = self._handler_rule(handler)
                        rules.append(
                            ir.Rule(
                                name=name,
                                id=rule_id,
                                shared_tag=shared_tag,
                                condition=ir.Condition(None, tuple(condition)),
                                action=ir.Action(None, tuple(action)),
                            )
                        )
                        rule_id += 1
                        shared_tag += 1
                    stages.append(ir.Stage(tuple(rules)))
            per_node[repeater.address] = ir.RuleSet(
                name=self.name,
                id=self.ruleset_id,
                owner_addr=repeater.address,
                stages=tuple(stages),
            )
        return per_node


def compile_program(
    program: ast.Program,
    topology: Topology,
    ruleset_id: int,
    default_name: str = "ruleset",
) -> CompiledOutput:
    """Lower a parsed, analyzed program against a topology.

    The caller is expected to have run the analyzer first; lowering assumes
    names resolve and types line up, and reports only the faults that can
    appear once a concrete chain is known (out-of-range repeaters and hops,
    conditions the compile-time evaluator cannot fold, send/recv mismatches).
    """
    return _Compiler(program, topology, ruleset_id, default_name).run()
