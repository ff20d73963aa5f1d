"""Simulator tests: swapping chains, purification, starvation handling and
exhaustive outcome enumeration."""

import pytest

from rula import analyzer, codegen, config, ir, parser, runtime


def compile_corpus(corpus, program_name, config_name):
    source = (corpus / program_name).read_text()
    program = parser.parse(source, filename=program_name)
    program, import_diags = analyzer.resolve_imports(program, [corpus])
    assert not [d for d in import_diags if d.is_error]
    topology = config.load_config((corpus / config_name).read_text())
    out = codegen.compile_program(program, topology, 7)
    assert out.ok, out.diagnostics
    return out.per_node, topology


class TestPurifyUpdate:
    def test_reference_value(self):
        assert runtime.purify_update(0.8) == pytest.approx(0.9412, abs=1e-4)

    def test_fixed_points(self):
        assert runtime.purify_update(1.0) == 1.0
        assert runtime.purify_update(0.5) == 0.5

    def test_improves_above_one_half(self):
        for f in (0.6, 0.75, 0.9, 0.99):
            assert runtime.purify_update(f) > f


class TestSwapThreeNodes:
    def test_seeded_run_reaches_quiescence(self, corpus):
        rulesets, topology = compile_corpus(
            corpus, "entanglement_swapping.rula", "config3.json"
        )
        report = runtime.run(rulesets, topology, seed=0)
        assert report.quiescent, report.stuck
        promoted = report.promoted_pairs()
        assert len(promoted) == 1
        assert promoted[0]["nodes"] == [0, 2]
        assert promoted[0]["bell_index"] == [0, 0]
        assert promoted[0]["fidelity"] == 1.0

    def test_every_branch_corrects_the_frame(self, corpus):
        rulesets, topology = compile_corpus(
            corpus, "entanglement_swapping.rula", "config3.json"
        )
        reports = runtime.enumerate_outcomes(rulesets, topology)
        assert len(reports) == 4
        assert sorted(r.outcome_path for r in reports) == [
            (0, 0),
            (0, 1),
            (1, 0),
            (1, 1),
        ]
        for report in reports:
            assert report.quiescent, report.stuck
            promoted = report.promoted_pairs()
            assert len(promoted) == 1
            assert promoted[0]["nodes"] == [0, 2]
            assert promoted[0]["bell_index"] == [0, 0]

    def test_swap_fires_before_the_end_nodes(self, corpus):
        rulesets, topology = compile_corpus(
            corpus, "entanglement_swapping.rula", "config3.json"
        )
        report = runtime.run(rulesets, topology, seed=3)
        assert report.fired[0]["address"] == 1
        assert report.fired[0]["rule"] == "swapping"


class TestSwapFiveNodes:
    def test_all_branches_quiescent(self, corpus):
        rulesets, topology = compile_corpus(
            corpus, "entanglement_swapping.rula", "config5.json"
        )
        reports = runtime.enumerate_outcomes(rulesets, topology)
        assert len(reports) == 64
        for report in reports:
            assert report.quiescent, report.stuck
            promoted = report.promoted_pairs()
            assert len(promoted) == 1
            assert promoted[0]["nodes"] == [0, 4]
            assert promoted[0]["bell_index"] == [0, 0]

    def test_fidelity_multiplies_across_links(self, corpus):
        rulesets, topology = compile_corpus(
            corpus, "entanglement_swapping.rula", "config5.json"
        )
        report = runtime.run(rulesets, topology, seed=0, initial_fidelity=0.9)
        assert report.quiescent
        [pair] = report.promoted_pairs()
        assert pair["fidelity"] == pytest.approx(0.9**4, abs=1e-9)


class TestPurification:
    def test_link_purification_then_swap(self, corpus):
        rulesets, topology = compile_corpus(corpus, "purification.rula", "config3.json")
        report = runtime.run(rulesets, topology, seed=1, initial_fidelity=0.8)
        assert report.quiescent, report.stuck
        [pair] = report.promoted_pairs()
        assert pair["nodes"] == [0, 2]
        assert pair["bell_index"] == [0, 0]
        boosted = runtime.purify_update(0.8)
        assert pair["fidelity"] == pytest.approx(boosted * boosted, abs=1e-9)

    def test_parity_checks_fire_on_every_node(self, corpus):
        rulesets, topology = compile_corpus(corpus, "purification.rula", "config3.json")
        report = runtime.run(rulesets, topology, seed=1, initial_fidelity=0.8)
        checks = [f for f in report.fired if f["rule"] == "parity_check"]
        assert {f["address"] for f in checks} == {0, 1, 2}
        assert len(checks) == 4

    def test_outcomes_stay_correlated_across_ends(self, corpus):
        # each sacrificial parity probe costs one free bit on the first side
        # only; the matching probe at the far end is fully determined
        rulesets, topology = compile_corpus(corpus, "purification.rula", "config3.json")
        reports = runtime.enumerate_outcomes(rulesets, topology, initial_fidelity=0.8)
        assert len(reports) == 16
        fidelities = set()
        for report in reports:
            assert report.quiescent, report.stuck
            [pair] = report.promoted_pairs()
            fidelities.add(pair["fidelity"])
        assert len(fidelities) == 1


class TestLoopProbe:
    def test_five_rounds_of_measurements(self, corpus):
        rulesets, topology = compile_corpus(corpus, "loop_probe.rula", "config2.json")
        report = runtime.run(rulesets, topology, seed=5)
        assert report.quiescent, report.stuck
        probes = [f for f in report.fired if f["rule"] == "probe"]
        waits = [f for f in report.fired if f["rule"] == "wait_meas"]
        assert len(probes) == 5
        assert len(waits) == 5
        assert report.messages_delivered == 5


class TestChain7:
    def test_asymmetric_schedule_bridges_the_chain(self, corpus):
        rulesets, topology = compile_corpus(corpus, "chain7.rula", "config7.json")
        report = runtime.run(rulesets, topology, seed=0)
        assert report.quiescent, report.stuck
        [pair] = report.promoted_pairs()
        assert pair["nodes"] == [0, 6]
        assert pair["bell_index"] == [0, 0]


class TestStuckDetection:
    def test_recv_from_silent_node_is_reported(self):
        topology = config.Topology(
            repeaters=(
                config.Repeater(name="#0", address=0, index=0),
                config.Repeater(name="#1", address=1, index=1),
            )
        )
        waiter = ir.Rule(
            name="waiter",
            id=0,
            shared_tag=0,
            condition=ir.Condition(clauses=(ir.RecvClause(partner_addr=1),)),
            action=ir.Action(clauses=()),
        )
        rulesets = {
            0: ir.RuleSet(name="t", id=1, owner_addr=0, stages=(ir.Stage((waiter,)),)),
            1: ir.RuleSet(name="t", id=1, owner_addr=1),
        }
        report = runtime.run(rulesets, topology)
        assert report.status == "stuck"
        assert len(report.stuck) == 1
        assert "waits on Recv from address 1" in report.stuck[0]
        assert "waiter" in report.stuck[0]

    def test_resource_starvation_is_reported(self):
        topology = config.Topology(
            repeaters=(
                config.Repeater(name="#0", address=0, index=0),
                config.Repeater(name="#1", address=1, index=1),
            )
        )
        # demands a second pair on a link that only provisions one
        greedy = ir.Rule(
            name="greedy",
            id=0,
            shared_tag=0,
            condition=ir.Condition(
                clauses=(
                    ir.ResClause(count=1, fidelity=0.99, partner_addr=1, qubit_index=0),
                )
            ),
            action=ir.Action(clauses=(ir.FreeClause(ir.QubitId(0)),)),
        )
        rulesets = {
            0: ir.RuleSet(name="t", id=1, owner_addr=0, stages=(ir.Stage((greedy,)),)),
            1: ir.RuleSet(name="t", id=1, owner_addr=1),
        }
        report = runtime.run(rulesets, topology, initial_fidelity=0.5)
        assert report.status == "stuck"
        assert "fidelity >= 0.99" in report.stuck[0]

    def test_dead_branch_sends_cancel_benignly(self, corpus):
        # the swap sends corrections only on some branches; the waiting
        # handlers for the untaken branches must resolve, not hang
        rulesets, topology = compile_corpus(
            corpus, "entanglement_swapping.rula", "config3.json"
        )
        for seed in range(4):
            report = runtime.run(rulesets, topology, seed=seed)
            assert report.quiescent, report.stuck


class TestTimers:
    def test_timer_delays_firing(self):
        topology = config.Topology(
            repeaters=(config.Repeater(name="#0", address=0, index=0),)
        )
        arm = ir.Rule(
            name="arm",
            id=0,
            shared_tag=0,
            condition=ir.Condition(),
            action=ir.Action(clauses=(ir.SetTimerClause(timer_id="t", duration=3),)),
        )
        wait = ir.Rule(
            name="after",
            id=1,
            shared_tag=1,
            condition=ir.Condition(clauses=(ir.TimerClause(timer_id="t"),)),
            action=ir.Action(),
        )
        rulesets = {
            0: ir.RuleSet(
                name="t",
                id=1,
                owner_addr=0,
                stages=(ir.Stage((arm,)), ir.Stage((wait,))),
            )
        }
        report = runtime.run(rulesets, topology)
        assert report.quiescent
        fired = {f["rule"]: f["round"] for f in report.fired}
        assert fired["after"] - fired["arm"] >= 3


class TestDeterminism:
    def test_same_seed_same_report(self, corpus):
        rulesets, topology = compile_corpus(
            corpus, "entanglement_swapping.rula", "config5.json"
        )
        a = runtime.run(rulesets, topology, seed=42)
        b = runtime.run(rulesets, topology, seed=42)
        assert a.to_json() == b.to_json()

    def test_outcome_paths_cover_seeds(self, corpus):
        rulesets, topology = compile_corpus(
            corpus, "entanglement_swapping.rula", "config3.json"
        )
        paths = {
            runtime.run(rulesets, topology, seed=s).outcome_path for s in range(20)
        }
        assert len(paths) > 1  # the seed genuinely drives the outcomes
