"""Lowering tests: ruleset-body evaluation, expansion arithmetic, send
splitting and deterministic output."""

import pytest

from rula import analyzer, codegen, config, ir, parser


def load_topology(corpus, name):
    return config.load_config((corpus / name).read_text())


def compile_corpus(corpus, program_name, config_name, ruleset_id=7, expect_clean=True):
    source = (corpus / program_name).read_text()
    program = parser.parse(source, filename=program_name)
    program, import_diags = analyzer.resolve_imports(program, [corpus])
    assert not [d for d in import_diags if d.is_error], import_diags
    analysis = analyzer.analyze_program(program)
    assert not analysis.errors, analysis.errors
    topology = load_topology(corpus, config_name)
    out = codegen.compile_program(program, topology, ruleset_id)
    if expect_clean:
        assert out.ok, out.diagnostics
    return out


def compile_source(source, topology, ruleset_id=7, check_analyzer=True):
    program = parser.parse(source)
    if check_analyzer:
        analysis = analyzer.analyze_program(program)
        assert not analysis.errors, analysis.errors
    return codegen.compile_program(program, topology, ruleset_id)


def chain(n):
    return config.Topology(
        repeaters=tuple(config.Repeater(name=f"#{i}", address=i, index=i) for i in range(n))
    )


def count_clauses(out, cls):
    total = 0
    for ruleset in out.per_node.values():
        for stage in ruleset.stages:
            for rule in stage.rules:
                total += sum(isinstance(c, cls) for c in rule.action.clauses)
    return total


def swap_owner_oracle(n):
    """Brute-force enumeration of the nested swapping schedule: for every
    doubling distance d, the nodes whose index satisfies i % (2d) == d."""
    owners = []
    for d in range(1, n // 2 + 1):
        for i in range(1, n - 1):
            if i % (2 * d) == d:
                owners.append((i, d))
    return owners


# --- corpus compilation ------------------------------------------------------


class TestSwappingCompile:
    def test_five_rulesets_share_one_id(self, corpus):
        out = compile_corpus(corpus, "entanglement_swapping.rula", "config5.json", ruleset_id=99)
        assert sorted(out.per_node) == [0, 1, 2, 3, 4]
        for ruleset in out.per_node.values():
            assert ruleset.id == 99
            assert ruleset.name == "entanglement_swapping"
        for addr, ruleset in out.per_node.items():
            assert ruleset.owner_addr == addr

    def test_swap_owners_match_schedule_oracle(self, corpus):
        out = compile_corpus(corpus, "entanglement_swapping.rula", "config5.json")
        expected = {i for i, _d in swap_owner_oracle(5)}
        assert expected == {1, 2, 3}
        owners = {
            addr
            for addr, ruleset in out.per_node.items()
            for stage in ruleset.stages
            for rule in stage.rules
            if rule.name == "swapping"
        }
        assert owners == expected

    def test_swapping_stage_is_five_siblings(self, corpus):
        out = compile_corpus(corpus, "entanglement_swapping.rula", "config5.json")
        stage = out.per_node[1].stages[0]
        assert len(stage.rules) == 5
        assert {rule.shared_tag for rule in stage.rules} == {stage.rules[0].shared_tag}
        assert {rule.name for rule in stage.rules} == {"swapping"}

        literals = []
        for rule in stage.rules[:4]:
            cmps = [c for c in rule.condition.clauses if isinstance(c, ir.CmpClause)]
            assert len(cmps) == 1
            assert cmps[0].operator == "Eq"
            assert cmps[0].cmp_val == "MeasResult"
            assert cmps[0].target_val.kind == "MeasResult"
            literals.append(cmps[0].target_val.value)
        assert literals == ["00", "01", "10", "11"]
        last = stage.rules[4]
        assert not [c for c in last.condition.clauses if isinstance(c, ir.CmpClause)]

    def test_siblings_share_res_clauses(self, corpus):
        out = compile_corpus(corpus, "entanglement_swapping.rula", "config5.json")
        stage = out.per_node[1].stages[0]
        for rule in stage.rules:
            res = [c for c in rule.condition.clauses if isinstance(c, ir.ResClause)]
            assert [(r.partner_addr, r.qubit_index, r.fidelity) for r in res] == [
                (0, 0, 0.8),
                (2, 1, 0.8),
            ]

    def test_bsm_lowering_matches_reference_shape(self, corpus):
        out = compile_corpus(corpus, "entanglement_swapping.rula", "config5.json")
        rule = out.per_node[1].stages[0].rules[0]
        qcirc, mx, mz = rule.action.clauses[:3]
        assert qcirc == ir.QCircClause(
            (ir.QGate(ir.QubitId(0), "CxControl"), ir.QGate(ir.QubitId(1), "CxTarget"))
        )
        assert mx == ir.MeasureClause(ir.QubitId(0), "X")
        assert mz == ir.MeasureClause(ir.QubitId(1), "Z")

    def test_correction_sends_carry_op_payload(self, corpus):
        out = compile_corpus(corpus, "entanglement_swapping.rula", "config5.json")
        stage = out.per_node[1].stages[0]
        rule01 = stage.rules[1]
        sends = [c for c in rule01.action.clauses if isinstance(c, ir.SendClause)]
        assert sends[0] == ir.SendClause("Update", 0, (("op", "Z"), ("qubit", "0")))
        # success path: both halves are handed over after the correction
        assert [s.message for s in sends] == ["Update", "Transfer", "Transfer"]
        assert [s.partner_addr for s in sends] == [0, 0, 2]

    def test_otherwise_sends_free_and_skips_transfer(self, corpus):
        out = compile_corpus(corpus, "entanglement_swapping.rula", "config5.json")
        last = out.per_node[1].stages[0].rules[4]
        sends = [c for c in last.action.clauses if isinstance(c, ir.SendClause)]
        assert [s.message for s in sends] == ["Free", "Free"]

    def test_end_node_receives_wait_stage(self, corpus):
        out = compile_corpus(corpus, "entanglement_swapping.rula", "config5.json")
        node0 = out.per_node[0]
        # one wait stage from the d=1 swap at node 1, one from the d=2 swap at node 2
        assert len(node0.stages) == 2
        for stage, sender in zip(node0.stages, (1, 2)):
            names = {rule.name for rule in stage.rules}
            assert names == {"wait_transfer", "wait_update", "wait_free"}
            for rule in stage.rules:
                recv = [c for c in rule.condition.clauses if isinstance(c, ir.RecvClause)]
                assert [r.partner_addr for r in recv] == [sender]
                kinds = [
                    c
                    for c in rule.condition.clauses
                    if isinstance(c, ir.CmpClause) and c.cmp_val == "MessageKind"
                ]
                assert len(kinds) == 1 and kinds[0].operator == "Eq"

    def test_wait_update_applies_left_side_correction(self, corpus):
        out = compile_corpus(corpus, "entanglement_swapping.rula", "config5.json")
        stage = out.per_node[0].stages[0]
        update = next(r for r in stage.rules if r.name == "wait_update")
        assert update.action.clauses == (
            ir.QCircClause((ir.QGate(ir.QubitId(0), "Z"),)),
        )
        right = out.per_node[2].stages[0]
        update_r = next(r for r in right.rules if r.name == "wait_update")
        assert update_r.action.clauses == (
            ir.QCircClause((ir.QGate(ir.QubitId(0), "X"),)),
        )
        transfer = next(r for r in stage.rules if r.name == "wait_transfer")
        assert transfer.action.clauses == (ir.PromoteClause(ir.QubitId(0)),)

    def test_rule_ids_sequential_and_validate_clean(self, corpus):
        out = compile_corpus(corpus, "entanglement_swapping.rula", "config5.json")
        for ruleset in out.per_node.values():
            assert ir.validate(ruleset) == []
            ids = [rule.id for stage in ruleset.stages for rule in stage.rules]
            assert ids == list(range(len(ids)))

    def test_symmetric_schedule_overruns_seven_node_chain(self, corpus):
        out = compile_corpus(
            corpus, "entanglement_swapping.rula", "config7.json", expect_clean=False
        )
        errors = [d for d in out.diagnostics if d.is_error]
        assert len(errors) == 1
        assert errors[0].code == "hop-range"


class TestExpansionArithmetic:
    def test_two_matches_make_sixteen_rules(self, corpus):
        out = compile_corpus(corpus, "two_matches.rula", "config3.json")
        stages = out.per_node[1].stages
        assert len(stages) == 1
        stage = stages[0]
        assert len(stage.rules) == 16
        assert len({rule.shared_tag for rule in stage.rules}) == 1

        combos = []
        for rule in stage.rules:
            cmps = [c for c in rule.condition.clauses if isinstance(c, ir.CmpClause)]
            assert [c.cmp_val for c in cmps] == ["MeasResult", "MeasResult1"]
            combos.append((cmps[0].target_val.value, cmps[1].target_val.value))
        outcomes = ["00", "01", "10", "11"]
        assert combos == [(a, b) for a in outcomes for b in outcomes]

    def test_product_rule_for_nested_counts(self):
        source = """\
#repeaters: vec[Repeater]
import std::operation::{measure, x}
rule nested<#rep>(){
    let partner: Repeater = #rep.hop(1)
    cond {
        @q1: res(1, 0.5, partner, 0)
        @q2: res(1, 0.5, partner, 1)
    } => act {
        let a: Result = measure(q1, "Z")
        let b: Result = measure(q2, "Z")
        match a {
            "0" => {},
            "1" => {x(q1)},
            "2" => {},
        }
        match b {
            "0" => {},
            "1" => {x(q2)},
        }
    }
}
ruleset nested_counts{
    nested<#repeaters(0)>()
}
"""
        out = compile_source(source, chain(2))
        assert out.ok, out.diagnostics
        assert len(out.per_node[0].stages[0].rules) == 3 * 2

    def test_loop_body_runs_exactly_five_times(self, corpus):
        out = compile_corpus(corpus, "loop_probe.rula", "config2.json")
        probe_rules = [
            rule
            for stage in out.per_node[0].stages
            for rule in stage.rules
            if rule.name == "probe"
        ]
        assert len(probe_rules) == 5
        assert len(out.per_node[0].stages) == 5

    def test_single_rule_stage_per_call_gets_fresh_tag(self, corpus):
        out = compile_corpus(corpus, "loop_probe.rula", "config2.json")
        tags = [stage.rules[0].shared_tag for stage in out.per_node[0].stages]
        assert tags == [0, 1, 2, 3, 4]


class TestChain7:
    def test_explicit_schedule_compiles(self, corpus):
        out = compile_corpus(corpus, "chain7.rula", "config7.json")
        owners = {
            addr
            for addr, ruleset in out.per_node.items()
            for stage in ruleset.stages
            for rule in stage.rules
            if rule.name == "swap_asym"
        }
        assert owners == {1, 2, 3, 4, 5}

    def test_last_swap_bridges_ends(self, corpus):
        out = compile_corpus(corpus, "chain7.rula", "config7.json")
        node4 = out.per_node[4]
        swap_stage = node4.stages[-1]
        res = [
            c for c in swap_stage.rules[0].condition.clauses if isinstance(c, ir.ResClause)
        ]
        assert [r.partner_addr for r in res] == [0, 6]


class TestPurification:
    def test_stage_layout_on_three_nodes(self, corpus):
        out = compile_corpus(corpus, "purification.rula", "config3.json")
        names0 = [[rule.name for rule in stage.rules] for stage in out.per_node[0].stages]
        assert names0[0] == ["local_operation"]
        assert names0[1] == ["parity_check", "parity_check"]
        # the swap at node 1 then installs its wait stage on this end node
        assert set(names0[2]) == {"wait_transfer", "wait_update", "wait_free"}

    def test_local_operation_action_sequence(self, corpus):
        out = compile_corpus(corpus, "purification.rula", "config3.json")
        rule = out.per_node[0].stages[0].rules[0]
        clauses = rule.action.clauses
        assert clauses[0] == ir.QCircClause(
            (ir.QGate(ir.QubitId(0), "CxControl"), ir.QGate(ir.QubitId(1), "CxTarget"))
        )
        assert clauses[1] == ir.MeasureClause(ir.QubitId(1), "Z")
        assert clauses[2] == ir.SendClause("Meas", 1, (("qubit", "1"), ("result", "MeasResult")))
        assert clauses[3] == ir.SetClause(variable="MeasResult", alias="self_result")
        assert clauses[4] == ir.PromoteClause(ir.QubitId(0))

    def test_parity_check_splits_on_message_result(self, corpus):
        out = compile_corpus(corpus, "purification.rula", "config3.json")
        stage = out.per_node[0].stages[1]
        success, failure = stage.rules
        assert success.shared_tag == failure.shared_tag

        s_cmp = [c for c in success.condition.clauses if isinstance(c, ir.CmpClause)]
        f_cmp = [c for c in failure.condition.clauses if isinstance(c, ir.CmpClause)]
        assert s_cmp == [
            ir.CmpClause("message.result", "Eq", ir.TaggedValue("Variable", "self_result"))
        ]
        assert f_cmp == [
            ir.CmpClause("message.result", "Neq", ir.TaggedValue("Variable", "self_result"))
        ]
        assert success.action.clauses == (ir.PromoteClause(ir.QubitId(0)),)
        assert failure.action.clauses == (ir.FreeClause(ir.QubitId(0)),)

    def test_different_thresholds_survive_lowering(self, corpus):
        out = compile_corpus(corpus, "purification.rula", "config3.json")
        rule = out.per_node[0].stages[0].rules[0]
        res = [c for c in rule.condition.clauses if isinstance(c, ir.ResClause)]
        assert [r.fidelity for r in res] == [0.8, 0.5]


class TestSendRecvBalance:
    @pytest.mark.parametrize(
        "program,cfg",
        [
            ("entanglement_swapping.rula", "config5.json"),
            ("purification.rula", "config3.json"),
            ("two_matches.rula", "config3.json"),
            ("loop_probe.rula", "config2.json"),
            ("chain7.rula", "config7.json"),
        ],
    )
    def test_every_send_is_bound(self, corpus, program, cfg):
        out = compile_corpus(corpus, program, cfg)
        send_clauses = count_clauses(out, ir.SendClause)
        assert send_clauses == len(out.obligations)
        assert out.unbound_recvs == []

    def test_meas_sends_bind_the_parity_check_recv(self, corpus):
        out = compile_corpus(corpus, "purification.rula", "config3.json")
        meas = [o for o in out.obligations if o.kind == "Meas"]
        assert len(meas) == 4
        assert {o.receiver for o in meas} == {"rule parity_check"}

    def test_swapping_sends_bind_synthesized_waits(self, corpus):
        out = compile_corpus(corpus, "entanglement_swapping.rula", "config5.json")
        assert {o.receiver for o in out.obligations} == {
            "synthesized wait_update",
            "synthesized wait_free",
            "synthesized wait_transfer",
        }


# --- compile-time evaluation -------------------------------------------------


def make_eval(n=5):
    program = parser.parse("#repeaters: vec[Repeater]\n")
    return codegen._Compiler(program, chain(n), 1, "t")


def eval_text(text, strict=False, env=None, n=5):
    compiler = make_eval(n)
    return compiler.eval(parser.parse_expression(text), env or {}, strict)


class TestConstEval:
    def test_division_truncates_toward_zero(self):
        assert eval_text("7 / 2") == 3
        assert eval_text("(0 - 7) / 2") == -3

    def test_modulo_keeps_dividend_sign(self):
        assert eval_text("7 % 2") == 1
        assert eval_text("(0 - 7) % 2") == -1

    def test_caret_is_integer_exponent(self):
        assert eval_text("2 ^ 10") == 1024

    def test_flat_chain_uses_ordinary_precedence(self):
        assert eval_text("2 + 3 * 4") == 14
        assert eval_text("20 - 10 / 5") == 18

    def test_repeater_len(self):
        assert eval_text("#repeaters.len()", n=7) == 7
        assert eval_text("#repeaters.len() / 2", strict=True, n=5) == 2

    def test_comparisons(self):
        assert eval_text("3 % 2 == 1", strict=True) is True
        assert eval_text("2 < 1", strict=True) is False

    def test_loop_variables_resolve(self):
        assert eval_text("i % (2 * d)", env={"i": 5, "d": 2}) == 1

    def test_division_by_zero_is_reported(self):
        with pytest.raises(codegen.LowerError):
            eval_text("1 / 0")

    def test_strict_mode_rejects_floats(self):
        with pytest.raises(codegen.NotConst):
            eval_text("1.5 + 1", strict=True)
        assert eval_text("1.5 + 1") == 2.5

    def test_strict_mode_rejects_runtime_names(self):
        with pytest.raises(codegen.NotConst):
            eval_text("flag == 1", strict=True)


class TestStaticRejection:
    def line_bounds(self, source, needle):
        offset = source.index(needle)
        start = source.rfind("\n", 0, offset) + 1
        end = source.index("\n", offset)
        return start, end

    def test_out_of_range_hop_is_one_diagnostic_inside_the_line(self):
        source = """\
#repeaters: vec[Repeater]
import std::operation::{measure}
rule far<#rep>(){
    let partner: Repeater = #rep.hop(5)
    cond {
        @q1: res(1, 0.5, partner, 0)
    } => act {
        free(q1)
    }
}
ruleset overreach{
    far<#repeaters(0)>()
}
"""
        out = compile_source(source, chain(3))
        errors = [d for d in out.diagnostics if d.is_error]
        assert len(errors) == 1
        assert errors[0].code == "hop-range"
        assert "0..2" in errors[0].message
        start, end = self.line_bounds(source, "#rep.hop(5)")
        assert start <= errors[0].span.start and errors[0].span.end <= end

    def test_runtime_valued_ruleset_if_is_one_diagnostic(self, corpus):
        source = """\
#repeaters: vec[Repeater]
import std::operation::{measure}
rule probe<#rep>(round: int){
    let partner: Repeater = #rep.hop(1)
    cond {
        @q1: res(1, 0.5, partner, 0)
    } => act {
        let result: Result = measure(q1, "Z")
        meas(q1, result) -> partner
    }
}
ruleset gated{
    if (#repeaters.len() > 1.5) {
        probe<#repeaters(0)>(1)
    }
}
"""
        program = parser.parse(source)
        analysis = analyzer.analyze_program(program)
        assert not analysis.errors  # the defect is invisible to name/type checks
        out = codegen.compile_program(program, chain(3), 7)
        errors = [d for d in out.diagnostics if d.is_error]
        assert len(errors) == 1
        assert errors[0].code == "const-expr"
        assert "not compile-time evaluable" in errors[0].message
        start, end = self.line_bounds(source, "1.5")
        assert start <= errors[0].span.start and errors[0].span.end <= end

    def test_out_of_range_repeater_index(self):
        source = """\
#repeaters: vec[Repeater]
import std::operation::{measure}
rule probe<#rep>(){
    let partner: Repeater = #rep.hop(1)
    cond {
        @q1: res(1, 0.5, partner, 0)
    } => act {
        free(q1)
    }
}
ruleset outside{
    probe<#repeaters(9)>()
}
"""
        out = compile_source(source, chain(2))
        errors = [d for d in out.diagnostics if d.is_error]
        assert len(errors) == 1
        assert errors[0].code == "repeater-range"

    def test_send_to_self_is_rejected(self):
        source = """\
#repeaters: vec[Repeater]
import std::operation::{measure}
rule loopback<#rep>(){
    let partner: Repeater = #rep.hop(0)
    cond {
        @q1: res(1, 0.5, partner, 0)
    } => act {
        transfer(q1) -> partner
    }
}
ruleset self_send{
    loopback<#repeaters(0)>()
}
"""
        out = compile_source(source, chain(2))
        errors = [d for d in out.diagnostics if d.is_error]
        assert len(errors) == 1
        assert errors[0].code == "send-self"


class TestFolding:
    def test_rule_level_compile_time_if_folds(self):
        source = """\
#repeaters: vec[Repeater]
import std::operation::{x, measure}
rule maybe_flip<#rep>(flip: int){
    let partner: Repeater = #rep.hop(1)
    cond {
        @q1: res(1, 0.5, partner, 0)
    } => act {
        if (flip == 1) {
            x(q1)
        }
        free(q1)
    }
}
ruleset folded{
    maybe_flip<#repeaters(0)>(1)
    maybe_flip<#repeaters(0)>(0)
}
"""
        out = compile_source(source, chain(2))
        assert out.ok, out.diagnostics
        stages = out.per_node[0].stages
        assert [len(stage.rules) for stage in stages] == [1, 1]
        with_flip = stages[0].rules[0].action.clauses
        without = stages[1].rules[0].action.clauses
        assert any(isinstance(c, ir.QCircClause) for c in with_flip)
        assert not any(isinstance(c, ir.QCircClause) for c in without)

    def test_compile_time_match_folds(self):
        source = """\
#repeaters: vec[Repeater]
import std::operation::{x}
rule pick<#rep>(mode: int){
    let partner: Repeater = #rep.hop(1)
    cond {
        @q1: res(1, 0.5, partner, 0)
    } => act {
        match mode {
            1 => {x(q1)},
            2 => {free(q1)},
        }
    }
}
ruleset picked{
    pick<#repeaters(0)>(2)
}
"""
        out = compile_source(source, chain(2))
        assert out.ok, out.diagnostics
        stage = out.per_node[0].stages[0]
        assert len(stage.rules) == 1
        assert stage.rules[0].action.clauses == (ir.FreeClause(ir.QubitId(0)),)


class TestDeterminism:
    def test_recompilation_is_byte_identical(self, corpus):
        first = compile_corpus(corpus, "purification.rula", "config3.json")
        second = compile_corpus(corpus, "purification.rula", "config3.json")
        for addr in first.per_node:
            assert ir.serialize(first.per_node[addr]) == ir.serialize(second.per_node[addr])

    def test_default_id_is_stable_and_input_sensitive(self):
        a = codegen.default_ruleset_id("swapping.rula", b"config")
        b = codegen.default_ruleset_id("swapping.rula", b"config")
        c = codegen.default_ruleset_id("swapping.rula", b"other")
        assert a == b
        assert a != c
        assert 0 <= a < 2**64

    def test_write_output_names_files_by_address(self, corpus, tmp_path):
        out = compile_corpus(corpus, "entanglement_swapping.rula", "config5.json")
        paths = codegen.write_output(out, tmp_path)
        assert sorted(p.name for p in paths) == [
            f"entanglement_swapping_{i}.json" for i in range(5)
        ]
        for path in paths:
            ruleset = ir.deserialize(path.read_text())
            assert ir.serialize(ruleset) == path.read_text()


class TestEdges:
    def test_empty_ruleset_body_still_emits_every_node(self):
        source = "#repeaters: vec[Repeater]\n\nruleset idle{\n}\n"
        out = compile_source(source, chain(3))
        assert out.ok
        assert sorted(out.per_node) == [0, 1, 2]
        for ruleset in out.per_node.values():
            assert ruleset.stages == ()
            assert ruleset.name == "idle"

    def test_series_bounds_are_inclusive(self):
        source = """\
#repeaters: vec[Repeater]
import std::operation::{measure}
rule probe<#rep>(round: int){
    let partner: Repeater = #rep.hop(1)
    cond {
        @q1: res(1, 0.5, partner, 0)
    } => act {
        free(q1)
    }
}
ruleset spread{
    for i in 2..4{
        probe<#repeaters(0)>(i)
    }
}
"""
        out = compile_source(source, chain(2))
        assert len(out.per_node[0].stages) == 3
