"""Deterministic execution of compiled rulesets over a linear repeater chain.

The simulator models each link-level Bell pair as a shared object with a
Pauli frame (phase bit, parity bit) and an analytic fidelity, while each
node only sees its own end of a pair.  Classical messages travel over
per-link FIFO queues and become visible at the next synchronous round.
Measurement outcomes are drawn from a pluggable bit source, which makes a
seeded run reproducible and lets the enumeration driver replay every
branch of the outcome tree.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from . import ir
from .config import Topology

__all__ = [
    "SimulationError",
    "RunReport",
    "purify_update",
    "run",
    "enumerate_outcomes",
]


class SimulationError(Exception):
    """The ruleset asked for something outside the tracked state space."""


def purify_update(fidelity: float) -> float:
    """Post-selected fidelity after one round of parity-checked purification
    of two pairs at the same fidelity."""
    f = fidelity
    return f * f / (f * f + (1.0 - f) * (1.0 - f))


# --- outcome sources ---------------------------------------------------------


class RandomOutcomes:
    def __init__(self, seed: int):
        self._rng = random.Random(seed)
        self.trace: list[int] = []

    def draw(self) -> int:
        bit = self._rng.getrandbits(1)
        self.trace.append(bit)
        return bit


class PlannedOutcomes:
    """Replays a fixed bit prefix, then extends with zeros.

    The enumeration driver flips recorded zeros one position at a time to
    walk the full binary tree of measurement outcomes.
    """

    def __init__(self, plan: tuple[int, ...] = ()):
        self._plan = plan
        self.trace: list[int] = []

    def draw(self) -> int:
        bit = self._plan[len(self.trace)] if len(self.trace) < len(self._plan) else 0
        self.trace.append(bit)
        return bit


# --- physical state ----------------------------------------------------------


@dataclass
class Pair:
    id: int
    fidelity: float
    phase_bit: int = 0
    parity_bit: int = 0
    # "idle" until a sacrificial parity measurement marks this pair as the
    # kept half of a purification round, "done" once the boost is applied
    purify_state: str = "idle"
    ends: list["End"] = field(default_factory=list)

    def other_end(self, end: "End") -> "End":
        for candidate in self.ends:
            if candidate is not end:
                return candidate
        raise SimulationError(f"pair {self.id} has no second end")


@dataclass
class End:
    pair: Pair
    node: int
    viewed_partner: int
    state: str = "free"  # free | promoted | gone
    seq: int = 0


@dataclass
class Message:
    kind: str
    src: int
    dst: int
    payload: dict[str, str]


# --- rule grouping -----------------------------------------------------------


def _is_composite(clauses: tuple[ir.ActionClause, ...], i: int) -> bool:
    """A fused two-qubit measurement: CX immediately followed by an X
    measurement of the control and a Z measurement of the target."""
    if i + 2 >= len(clauses):
        return False
    qc, mx, mz = clauses[i], clauses[i + 1], clauses[i + 2]
    if not isinstance(qc, ir.QCircClause) or len(qc.qgates) != 2:
        return False
    ctrl, tgt = qc.qgates
    if ctrl.kind != "CxControl" or tgt.kind != "CxTarget":
        return False
    return (
        isinstance(mx, ir.MeasureClause)
        and isinstance(mz, ir.MeasureClause)
        and mx.qubit == ctrl.qubit
        and mx.basis == "X"
        and mz.qubit == tgt.qubit
        and mz.basis == "Z"
    )


def _register_layout(clauses: tuple[ir.ActionClause, ...]) -> dict[int, str]:
    """Map clause index -> register name produced there, mirroring the
    compiler's allocation order (composites take one register)."""
    layout: dict[int, str] = {}
    count = 0
    i = 0
    while i < len(clauses):
        if _is_composite(clauses, i):
            layout[i] = "MeasResult" if count == 0 else f"MeasResult{count}"
            count += 1
            i += 3
        elif isinstance(clauses[i], ir.MeasureClause):
            layout[i] = "MeasResult" if count == 0 else f"MeasResult{count}"
            count += 1
            i += 1
        else:
            i += 1
    return layout


@dataclass
class Group:
    """Rules in one stage sharing a shared_tag: alternatives of which at
    most one fires."""

    tag: int
    rules: list[ir.Rule]
    res: list[ir.ResClause]
    recv: ir.RecvClause | None
    kind_gate: str | None
    timers: list[ir.TimerClause]
    discriminators: list[list[ir.CmpClause]]
    prefix_len: int
    state: str = "pending"  # pending | fired | cancelled | stuck
    fired_rule: ir.Rule | None = None

    @property
    def resolved(self) -> bool:
        return self.state in ("fired", "cancelled")


def _split_point(rule: ir.Rule, discriminators: list[ir.CmpClause]) -> int:
    """For a single-alternative group: how many action clauses may run
    before its comparison clauses can be evaluated."""
    if not discriminators:
        return len(rule.action.clauses)
    layout = _register_layout(rule.action.clauses)
    needed = {c.cmp_val for c in discriminators}
    end = 0
    for idx, reg in layout.items():
        if reg in needed:
            width = 3 if _is_composite(rule.action.clauses, idx) else 1
            end = max(end, idx + width)
    return end


def _build_group(rules: list[ir.Rule]) -> Group:
    head = rules[0]
    res = [c for c in head.condition.clauses if isinstance(c, ir.ResClause)]
    recvs = [c for c in head.condition.clauses if isinstance(c, ir.RecvClause)]
    timers = [c for c in head.condition.clauses if isinstance(c, ir.TimerClause)]
    kind_gate = None
    discriminators: list[list[ir.CmpClause]] = []
    for rule in rules:
        discs = []
        for c in rule.condition.clauses:
            if isinstance(c, ir.CmpClause):
                if c.cmp_val == "MessageKind":
                    kind_gate = c.target_val.value
                else:
                    discs.append(c)
        discriminators.append(discs)

    if len(rules) == 1:
        prefix_len = _split_point(head, discriminators[0])
    else:
        actions = [r.action.clauses for r in rules]
        prefix_len = 0
        shortest = min(len(a) for a in actions)
        while prefix_len < shortest and all(
            a[prefix_len] == actions[0][prefix_len] for a in actions
        ):
            prefix_len += 1
    return Group(
        tag=head.shared_tag,
        rules=rules,
        res=res,
        recv=recvs[0] if recvs else None,
        kind_gate=kind_gate,
        timers=timers,
        discriminators=discriminators,
        prefix_len=prefix_len,
    )


@dataclass
class Node:
    address: int
    ruleset: ir.RuleSet
    stages: list[list[Group]]
    stage_idx: int = 0
    store: dict[str, str] = field(default_factory=dict)
    inboxes: dict[int, list[Message]] = field(default_factory=dict)
    timers: dict[str, int] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return self.stage_idx >= len(self.stages)

    def current(self) -> list[Group]:
        return self.stages[self.stage_idx]

    def advance(self) -> None:
        while not self.complete and all(g.resolved for g in self.current()):
            self.stage_idx += 1


# --- the network -------------------------------------------------------------


def _provision(rulesets: dict[int, ir.RuleSet]) -> dict[tuple[int, int], int]:
    """Pairs to create per link: each node needs, toward each neighbour, one
    fresh pair for every resource clause of every rule group."""
    demand: dict[tuple[int, int], int] = {}
    for addr, ruleset in rulesets.items():
        for stage in ruleset.stages:
            for group_rules in _group_rules(stage):
                head = group_rules[0]
                for clause in head.condition.clauses:
                    if isinstance(clause, ir.ResClause):
                        key = (addr, clause.partner_addr)
                        demand[key] = demand.get(key, 0) + clause.count
    links: dict[tuple[int, int], int] = {}
    for (a, b), n in demand.items():
        key = (min(a, b), max(a, b))
        links[key] = max(links.get(key, 0), n)
    return links


def _group_rules(stage: ir.Stage) -> list[list[ir.Rule]]:
    groups: list[list[ir.Rule]] = []
    for rule in stage.rules:
        if groups and groups[-1][0].shared_tag == rule.shared_tag:
            groups[-1].append(rule)
        else:
            groups.append([rule])
    return groups


class Network:
    def __init__(
        self,
        rulesets: dict[int, ir.RuleSet],
        topology: Topology,
        outcomes,
        initial_fidelity: float,
    ):
        self.topology = topology
        self.outcomes = outcomes
        self.round = 0
        self.fired: list[dict] = []
        self.delivered = 0
        self.pairs: list[Pair] = []
        self.outbox: list[Message] = []
        # one sampled reference bit per measured observable, keyed by the
        # set of (pair, basis) correlations the observable spans
        self.pending: dict[frozenset, int] = {}

        self.nodes: dict[int, Node] = {}
        for rep in topology.repeaters:
            ruleset = rulesets.get(rep.address)
            if ruleset is None:
                ruleset = ir.RuleSet(name="empty", id=0, owner_addr=rep.address)
            stages = [
                [_build_group(rules) for rules in _group_rules(stage)]
                for stage in ruleset.stages
            ]
            self.nodes[rep.address] = Node(rep.address, ruleset, stages)

        self.ends: dict[int, list[End]] = {addr: [] for addr in self.nodes}
        seq = 0
        links = _provision(rulesets)
        addresses = sorted(self.nodes)
        for a, b in zip(addresses, addresses[1:]):
            for _ in range(links.get((a, b), 0)):
                pair = Pair(id=len(self.pairs), fidelity=initial_fidelity)
                self.pairs.append(pair)
                for holder, partner in ((a, b), (b, a)):
                    end = End(pair=pair, node=holder, viewed_partner=partner, seq=seq)
                    seq += 1
                    pair.ends.append(end)
                    self.ends[holder].append(end)

    # --- resource selection --------------------------------------------------

    def _match_res(self, node: Node, group: Group) -> list[tuple[int, End]] | None:
        chosen: list[tuple[int, End]] = []
        taken: set[int] = set()
        for clause in group.res:
            for _ in range(clause.count):
                end = self._find_end(
                    node.address,
                    clause.partner_addr,
                    taken,
                    min_fidelity=clause.fidelity,
                )
                if end is None:
                    return None
                taken.add(id(end))
                chosen.append((clause.qubit_index, end))
        return chosen

    def _find_end(
        self,
        address: int,
        partner: int,
        taken: set[int],
        min_fidelity: float = 0.0,
    ) -> End | None:
        for end in self.ends[address]:
            if id(end) in taken or end.state == "gone":
                continue
            if end.viewed_partner != partner:
                continue
            if end.pair.fidelity + 1e-12 < min_fidelity:
                continue
            return end
        return None

    # --- satisfiability ------------------------------------------------------

    def _head(self, node: Node, src: int) -> Message | None:
        queue = node.inboxes.get(src)
        return queue[0] if queue else None

    def _satisfiable(self, node: Node, group: Group) -> bool:
        if group.recv is not None:
            head = self._head(node, group.recv.partner_addr)
            if head is None:
                return False
            if group.kind_gate is not None and head.kind != group.kind_gate:
                return False
        for timer in group.timers:
            expiry = node.timers.get(timer.timer_id)
            if expiry is None or self.round < expiry:
                return False
        return self._match_res(node, group) is not None

    # --- firing --------------------------------------------------------------

    def _fire(self, node: Node, group: Group) -> None:
        bindings: dict[int, End] = {}
        for index, end in self._match_res(node, group) or []:
            bindings.setdefault(index, end)
        message = None
        if group.recv is not None:
            message = node.inboxes[group.recv.partner_addr].pop(0)
        self._bind_inherited(node, group, bindings, message)
        if message is not None and message.kind == "Transfer":
            self._repoint(bindings)

        ctx = _Firing(self, node, bindings, message)
        head = group.rules[0]
        ctx.execute(head.action.clauses[: group.prefix_len])

        winner = None
        for rule, discs in zip(group.rules, group.discriminators):
            if all(ctx.compare(c) for c in discs):
                winner = rule
                break
        if winner is not None:
            ctx.execute(winner.action.clauses[group.prefix_len :])
            group.state = "fired"
            group.fired_rule = winner
            self.fired.append(
                {
                    "round": self.round,
                    "address": node.address,
                    "rule": winner.name,
                    "id": winner.id,
                }
            )
        else:
            group.state = "cancelled"
        node.advance()

    def _bind_inherited(
        self,
        node: Node,
        group: Group,
        bindings: dict[int, End],
        message: Message | None,
    ) -> None:
        """Action clauses may reference qubit slots with no matching resource
        clause: those bind earlier promoted (or still waiting) ends."""
        referenced: set[int] = set()
        for rule in group.rules:
            for clause in rule.action.clauses:
                if isinstance(clause, (ir.PromoteClause, ir.FreeClause, ir.MeasureClause)):
                    referenced.add(clause.qubit.qubit_index)
                elif isinstance(clause, ir.QCircClause):
                    referenced.update(g.qubit.qubit_index for g in clause.qgates)
        taken = {id(end) for end in bindings.values()}
        for index in sorted(referenced - set(bindings)):
            end = None
            if message is not None:
                end = self._find_end(node.address, message.src, taken)
            if end is None:
                for candidate in self.ends[node.address]:
                    if candidate.state == "promoted" and id(candidate) not in taken:
                        end = candidate
                        break
            if end is None:
                raise SimulationError(
                    f"address {node.address}: no resource to bind qubit {index}"
                )
            taken.add(id(end))
            bindings[index] = end

    def _repoint(self, bindings: dict[int, End]) -> None:
        """A Transfer message hands over a (possibly spliced) pair: the
        receiver learns who holds the far end now."""
        for end in bindings.values():
            other = end.pair.other_end(end)
            end.viewed_partner = other.node

    # --- main loop -----------------------------------------------------------

    def deliver(self) -> bool:
        any_sent = bool(self.outbox)
        for msg in self.outbox:
            inbox = self.nodes[msg.dst].inboxes.setdefault(msg.src, [])
            inbox.append(msg)
            self.delivered += 1
        self.outbox.clear()
        return any_sent

    def step(self) -> bool:
        progress = False
        for address in sorted(self.nodes):
            node = self.nodes[address]
            if node.complete:
                continue
            for group in node.current():
                if group.resolved:
                    continue
                if self._satisfiable(node, group):
                    self._fire(node, group)
                    progress = True
                    break
        if self.deliver():
            progress = True
        self.round += 1
        return progress

    # --- starvation analysis -------------------------------------------------

    def _matching_sends(self, sender: int, dst: int, kind: str | None):
        """Every rule at `sender` containing a send of `kind` to `dst`."""
        for stage in self.nodes[sender].stages:
            for group in stage:
                for rule in group.rules:
                    for clause in rule.action.clauses:
                        if not isinstance(clause, ir.SendClause):
                            continue
                        if clause.partner_addr != dst:
                            continue
                        if kind is not None and clause.message != kind:
                            continue
                        yield group, rule
                        break

    def _inbox_has(self, node: Node, src: int, kind: str | None) -> bool:
        return any(
            kind is None or msg.kind == kind for msg in node.inboxes.get(src, [])
        )

    def cancel_starved(self) -> bool:
        """At a no-progress point, resolve recv-gated groups whose message
        can provably never arrive: benign when the sender had matching send
        clauses but every rule carrying one is already resolved without
        sending, stuck when the sender has none at all."""
        changed = False
        progressed = True
        while progressed:
            progressed = False
            for address in sorted(self.nodes):
                node = self.nodes[address]
                if node.complete:
                    continue
                for group in node.current():
                    if group.resolved or group.state == "stuck" or group.recv is None:
                        continue
                    src = group.recv.partner_addr
                    if self._inbox_has(node, src, group.kind_gate):
                        continue
                    carriers = list(
                        self._matching_sends(src, address, group.kind_gate)
                    )
                    if not carriers:
                        # terminal: the sender's ruleset can never produce it
                        group.state = "stuck"
                    elif all(g.resolved for g, _r in carriers) and not any(
                        g.state == "fired"
                        and any(
                            isinstance(c, ir.SendClause)
                            and c.partner_addr == address
                            and (group.kind_gate is None or c.message == group.kind_gate)
                            for c in g.fired_rule.action.clauses
                        )
                        for g, _r in carriers
                    ):
                        group.state = "cancelled"
                        progressed = changed = True
                node.advance()
        return changed

    def timers_armed(self) -> bool:
        """A pending group is waiting on a timer that is still counting."""
        for node in self.nodes.values():
            if node.complete:
                continue
            for group in node.current():
                if group.resolved:
                    continue
                for timer in group.timers:
                    expiry = node.timers.get(timer.timer_id)
                    if expiry is not None and self.round <= expiry:
                        return True
        return False

    def stuck_reports(self) -> list[str]:
        reports = []
        for address in sorted(self.nodes):
            node = self.nodes[address]
            if node.complete:
                continue
            for group in node.current():
                if group.resolved and group.state != "stuck":
                    continue
                rule = group.rules[0]
                if group.recv is not None:
                    kind = f" for {group.kind_gate} messages" if group.kind_gate else ""
                    reports.append(
                        f"address {address}: rule '{rule.name}' (id {rule.id}) "
                        f"waits on Recv from address {group.recv.partner_addr}{kind}, "
                        "which never sends it"
                    )
                else:
                    wants = ", ".join(
                        f"{c.count} pair(s) with address {c.partner_addr} "
                        f"at fidelity >= {c.fidelity}"
                        for c in group.res
                    )
                    reports.append(
                        f"address {address}: rule '{rule.name}' (id {rule.id}) "
                        f"waits on resources: {wants}"
                    )
        return reports


# --- clause execution --------------------------------------------------------


class _Firing:
    def __init__(self, net: Network, node: Node, bindings: dict[int, End], message):
        self.net = net
        self.node = node
        self.bindings = bindings
        self.message = message
        self.registers: dict[str, str] = {}
        self.reg_count = 0
        # per-slot measurement dependency sets built up by two-qubit gates
        self.zdeps = {
            q: frozenset({(end.pair.id, "Z")}) for q, end in bindings.items()
        }
        self.xdeps = {
            q: frozenset({(end.pair.id, "X")}) for q, end in bindings.items()
        }

    def _alloc(self) -> str:
        name = "MeasResult" if self.reg_count == 0 else f"MeasResult{self.reg_count}"
        self.reg_count += 1
        return name

    def execute(self, clauses: tuple[ir.ActionClause, ...]) -> None:
        i = 0
        while i < len(clauses):
            if _is_composite(clauses, i):
                self._splice(clauses[i], clauses[i + 1], clauses[i + 2])
                i += 3
                continue
            clause = clauses[i]
            if isinstance(clause, ir.QCircClause):
                self._qcirc(clause)
            elif isinstance(clause, ir.MeasureClause):
                self._measure_single(clause)
            elif isinstance(clause, ir.SendClause):
                self._send(clause)
            elif isinstance(clause, ir.SetClause):
                self._set(clause)
            elif isinstance(clause, ir.PromoteClause):
                self._promote(clause)
            elif isinstance(clause, ir.FreeClause):
                end = self.bindings[clause.qubit.qubit_index]
                end.state = "gone"
                if end.pair.purify_state == "pending":
                    end.pair.purify_state = "idle"
            elif isinstance(clause, ir.SetTimerClause):
                self.node.timers[clause.timer_id] = self.net.round + clause.duration
            else:
                raise SimulationError(f"unsupported action clause: {clause!r}")
            i += 1

    # --- gates ---------------------------------------------------------------

    def _qcirc(self, clause: ir.QCircClause) -> None:
        gates = list(clause.qgates)
        i = 0
        while i < len(gates):
            gate = gates[i]
            q = gate.qubit.qubit_index
            if gate.kind in ("CxControl", "CzControl"):
                if i + 1 >= len(gates):
                    raise SimulationError(f"unpaired {gate.kind} gate")
                tq = gates[i + 1].qubit.qubit_index
                if gate.kind == "CxControl":
                    self.zdeps[tq] = self.zdeps[tq] ^ self.zdeps[q]
                    self.xdeps[q] = self.xdeps[q] ^ self.xdeps[tq]
                else:
                    self.xdeps[q] = self.xdeps[q] ^ self.zdeps[tq]
                    self.xdeps[tq] = self.xdeps[tq] ^ self.zdeps[q]
                i += 2
                continue
            pair = self.bindings[q].pair
            if gate.kind == "X":
                pair.parity_bit ^= 1
            elif gate.kind == "Z":
                pair.phase_bit ^= 1
            elif gate.kind == "Y":
                pair.parity_bit ^= 1
                pair.phase_bit ^= 1
            else:
                raise SimulationError(
                    f"gate {gate.kind} on an entangled qubit is outside the "
                    "tracked state space"
                )
            i += 1

    # --- measurements --------------------------------------------------------

    def _outcome(self, signature: frozenset) -> int:
        net = self.net
        if signature in net.pending:
            corr = 0
            for pair_id, basis in signature:
                pair = net.pairs[pair_id]
                corr ^= pair.parity_bit if basis == "Z" else pair.phase_bit
            return net.pending[signature] ^ corr
        bit = net.outcomes.draw()
        net.pending[signature] = bit
        return bit

    def _measure_single(self, clause: ir.MeasureClause) -> None:
        q = clause.qubit.qubit_index
        end = self.bindings[q]
        if clause.basis == "Z":
            signature = self.zdeps[q]
        elif clause.basis == "X":
            signature = self.xdeps[q]
        else:
            raise SimulationError(f"unsupported measurement basis {clause.basis!r}")
        # a parity probe spanning a second pair marks that pair as the kept
        # half of a purification round
        for pair_id, _basis in signature:
            if pair_id != end.pair.id:
                self.net.pairs[pair_id].purify_state = "pending"
        bit = self._outcome(signature)
        self.registers[self._alloc()] = str(bit)
        end.state = "gone"

    def _splice(self, qc: ir.QCircClause, mx: ir.MeasureClause, mz: ir.MeasureClause):
        """Joint measurement of two local halves: consumes both pairs and
        entangles the two remote halves, folding the outcome bits into the
        new pair's frame."""
        cq = qc.qgates[0].qubit.qubit_index
        tq = qc.qgates[1].qubit.qubit_index
        self._qcirc(qc)
        left = self.bindings[cq]
        right = self.bindings[tq]
        m_phase = self._outcome(self.xdeps[cq])
        m_parity = self._outcome(self.zdeps[tq])
        left.state = "gone"
        right.state = "gone"

        lp, rp = left.pair, right.pair
        spliced = Pair(
            id=len(self.net.pairs),
            fidelity=lp.fidelity * rp.fidelity,
            phase_bit=lp.phase_bit ^ rp.phase_bit ^ m_phase,
            parity_bit=lp.parity_bit ^ rp.parity_bit ^ m_parity,
        )
        self.net.pairs.append(spliced)
        for old in (lp, rp):
            far = old.other_end(self.bindings[cq if old is lp else tq])
            far.pair = spliced
            spliced.ends.append(far)
        self.registers[self._alloc()] = f"{m_parity}{m_phase}"

    # --- classical effects ---------------------------------------------------

    def _send(self, clause: ir.SendClause) -> None:
        payload = {}
        for key, value in clause.payload:
            if key == "result":
                payload[key] = self.registers[value]
            else:
                payload[key] = value
        self.net.outbox.append(
            Message(clause.message, self.node.address, clause.partner_addr, payload)
        )

    def _set(self, clause: ir.SetClause) -> None:
        name = clause.variable
        if name in self.registers:
            value = self.registers[name]
        elif name.startswith("message."):
            if self.message is None:
                raise SimulationError(f"no message bound for {name}")
            value = self.message.payload.get(name.split(".", 1)[1], "")
        else:
            value = self.node.store.get(name, "")
        self.node.store[clause.alias or name] = value

    def _promote(self, clause: ir.PromoteClause) -> None:
        end = self.bindings[clause.qubit.qubit_index]
        if end.state == "gone":
            raise SimulationError(
                f"address {self.node.address}: promote of a consumed qubit"
            )
        end.state = "promoted"
        pair = end.pair
        if pair.purify_state == "pending" and self.message is not None:
            # the parity-check shape: a message comparison guarding the keep
            pair.fidelity = purify_update(pair.fidelity)
            pair.purify_state = "done"

    # --- comparisons ---------------------------------------------------------

    def _value(self, name: str) -> str:
        if name in self.registers:
            return self.registers[name]
        if name.startswith("message."):
            if self.message is None:
                return ""
            return self.message.payload.get(name.split(".", 1)[1], "")
        return self.node.store.get(name, "")

    def compare(self, clause: ir.CmpClause) -> bool:
        left = self._value(clause.cmp_val)
        target = clause.target_val
        if target.kind == "Variable":
            right = self._value(target.value)
        else:
            right = target.value
        op = clause.operator
        if op == "Eq":
            return left == right
        if op == "Neq":
            return left != right
        try:
            lv: object = int(left)
            rv: object = int(right)
        except ValueError:
            lv, rv = left, right
        if op == "Lt":
            return lv < rv
        if op == "Leq":
            return lv <= rv
        if op == "Gt":
            return lv > rv
        if op == "Geq":
            return lv >= rv
        raise SimulationError(f"unsupported comparison operator {op}")


# --- reports -----------------------------------------------------------------


@dataclass
class RunReport:
    status: str
    rounds: int
    fired: list[dict]
    pairs: list[dict]
    stuck: list[str]
    messages_delivered: int
    outcome_path: tuple[int, ...] = ()

    @property
    def quiescent(self) -> bool:
        return self.status == "quiescent"

    def promoted_pairs(self) -> list[dict]:
        return [p for p in self.pairs if p["states"] == ["promoted", "promoted"]]

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "rounds": self.rounds,
            "outcome_path": list(self.outcome_path),
            "messages_delivered": self.messages_delivered,
            "fired": self.fired,
            "pairs": self.pairs,
            "stuck": self.stuck,
        }


def _report(net: Network) -> RunReport:
    complete = all(node.complete for node in net.nodes.values())
    stuck = [] if complete else net.stuck_reports()
    pairs = []
    for pair in net.pairs:
        live = [e for e in pair.ends if e.state != "gone"]
        if len(live) != 2:
            continue
        live.sort(key=lambda e: e.node)
        pairs.append(
            {
                "nodes": [e.node for e in live],
                "states": [e.state for e in live],
                "bell_index": [pair.phase_bit, pair.parity_bit],
                "fidelity": round(pair.fidelity, 12),
            }
        )
    return RunReport(
        status="quiescent" if complete else "stuck",
        rounds=net.round,
        fired=net.fired,
        pairs=pairs,
        stuck=stuck,
        messages_delivered=net.delivered,
        outcome_path=tuple(net.outcomes.trace),
    )


def _run_network(
    rulesets: dict[int, ir.RuleSet],
    topology: Topology,
    outcomes,
    initial_fidelity: float,
    max_rounds: int,
) -> RunReport:
    net = Network(rulesets, topology, outcomes, initial_fidelity)
    for node in net.nodes.values():
        node.advance()
    while net.round < max_rounds:
        if all(node.complete for node in net.nodes.values()):
            break
        if not net.step():
            if not net.cancel_starved() and not net.timers_armed():
                break
    return _report(net)


def run(
    rulesets: dict[int, ir.RuleSet],
    topology: Topology,
    *,
    seed: int = 0,
    initial_fidelity: float = 1.0,
    max_rounds: int = 10_000,
) -> RunReport:
    """Execute the per-node rulesets to quiescence with sampled outcomes."""
    return _run_network(
        rulesets, topology, RandomOutcomes(seed), initial_fidelity, max_rounds
    )


def enumerate_outcomes(
    rulesets: dict[int, ir.RuleSet],
    topology: Topology,
    *,
    initial_fidelity: float = 1.0,
    max_rounds: int = 10_000,
) -> list[RunReport]:
    """Run every branch of the measurement outcome tree exactly once."""
    reports: list[RunReport] = []
    prefixes: list[tuple[int, ...]] = [()]
    while prefixes:
        prefix = prefixes.pop()
        source = PlannedOutcomes(prefix)
        report = _run_network(rulesets, topology, source, initial_fidelity, max_rounds)
        reports.append(report)
        path = report.outcome_path
        for i in range(len(path) - 1, len(prefix) - 1, -1):
            if path[i] == 0:
                prefixes.append(path[:i] + (1,))
    reports.sort(key=lambda r: r.outcome_path)
    return reports
