import numpy as np
import pytest

from dpaudit import corpus
from dpaudit.accountant import advanced_composition
from dpaudit.mechanisms import InputDomainError, default_registry
from dpaudit.neighbors import AdjacencyModel, ColumnSpec, TabularDataset, gen_neighbors
from dpaudit.recorder import generate_traces, run_pipeline_pair
from dpaudit.validator import ViolationKind, validate_records

REG = default_registry()
SPECS = {k: m.spec for k, m in REG.items()}


def audit_pair(pipeline, d, dp, seed=3, epsilon=1.0):
    t, tp = generate_traces(pipeline, d, dp, seed, epsilon=epsilon, registry=REG)
    return validate_records(t, tp, SPECS)


class TestRegistry:
    def test_manifest_shape(self):
        entries = corpus.manifest()
        assert len(entries) == 20
        for e in entries:
            assert set(e) == {
                "name", "variant", "expected_violation", "adjacency", "strategy", "audit",
            }
        buggy = [e for e in entries if e["variant"] == "buggy"]
        assert all(e["expected_violation"] is not None for e in buggy)
        fixed = [e for e in entries if e["variant"] == "fixed"]
        assert all(e["expected_violation"] is None for e in fixed)

    def test_unknown_case(self):
        with pytest.raises(KeyError):
            corpus.get_case("nope", "buggy")


class TestScaledCount:
    def test_buggy_invisible_without_neighbor_change(self):
        pipe = lambda d, e, ctx: corpus.run_scaled_count(d, e, ctx, 2, 1.0)
        report = audit_pair(pipe, [0, 0, 0], [0, 0, 0])
        assert report.verdict == "pass"

    def test_fixed_passes_on_designated_pair(self):
        pipe = lambda d, e, ctx: corpus.run_scaled_count(d, e, ctx, 2, 2.0)
        report = audit_pair(pipe, [0, 0, 0], [0, 0, 0, 0])
        assert report.verdict == "pass"


class TestCovariance:
    schema = [ColumnSpec("x", "real", 0.0, 2.0)]

    def _data(self, extra=None):
        base = [0.5, 1.0, 1.5, 0.2]
        d = TabularDataset(self.schema, {"x": list(base)})
        dp = TabularDataset(self.schema, {"x": list(base) + ([extra] if extra is not None else [])})
        return d, dp

    def test_buggy_flagged_by_large_outlier(self):
        d, dp = self._data(extra=1e6)
        pipe = lambda dd, e, ctx: corpus.run_covariance_release(dd, e, ctx, 2.0, use_raw=True)
        report = audit_pair(pipe, d, dp)
        v = [x for x in report.violations if x.kind == ViolationKind.SENSITIVITY_VIOLATION]
        assert v and v[0].measured > 1e6

    def test_fixed_clips_the_outlier(self):
        d, dp = self._data(extra=1e6)
        pipe = lambda dd, e, ctx: corpus.run_covariance_release(dd, e, ctx, 2.0, use_raw=False)
        assert audit_pair(pipe, d, dp).verdict == "pass"

    def test_buggy_passes_on_in_range_neighbor(self):
        d, dp = self._data(extra=1.0)
        pipe = lambda dd, e, ctx: corpus.run_covariance_release(dd, e, ctx, 2.0, use_raw=True)
        assert audit_pair(pipe, d, dp).verdict == "pass"


class TestPrivbayes:
    schema = [ColumnSpec("a", "int", 0, 4), ColumnSpec("b", "int", 0, 9),
              ColumnSpec("c", "int", 0, 3)]

    def test_zero_scale_flagged(self):
        d = TabularDataset(self.schema, {"a": [1] * 10, "b": [2] * 10, "c": [3] * 10})
        dp = d.with_row_added((1, 2, 3))
        pipe = lambda dd, e, ctx: corpus.run_privbayes_lite(
            dd, e, ctx, n_public=10, k_parents=3, private_branch=True, guard_k=False
        )
        report = audit_pair(pipe, d, dp)
        assert ViolationKind.NOISE_MISCALIBRATION in report.kinds()

    def test_branch_flip_is_invariance_violation(self):
        # craft a pair that flips the comparison on the private value
        d = TabularDataset(self.schema, {"a": [0] * 10, "b": [0] * 10, "c": [0] * 10})
        dp = d.with_row_added((4, 0, 0))  # moves mean of column a from 0 to 4/11
        pipe = lambda dd, e, ctx: corpus.run_privbayes_lite(
            dd, e, ctx, n_public=10, k_parents=2, mi_thresh=0.005,
            private_branch=True, guard_k=True
        )
        report = audit_pair(pipe, d, dp)
        assert ViolationKind.INVARIANCE_VIOLATION in report.kinds()

    def test_fixed_branch_on_noised_value_is_invariant(self):
        d = TabularDataset(self.schema, {"a": [0] * 10, "b": [0] * 10, "c": [0] * 10})
        dp = d.with_row_added((4, 0, 0))
        pipe = lambda dd, e, ctx: corpus.run_privbayes_lite(
            dd, e, ctx, n_public=10, k_parents=2, mi_thresh=0.005,
            private_branch=False, guard_k=True
        )
        report = audit_pair(pipe, d, dp)
        assert ViolationKind.INVARIANCE_VIOLATION not in report.kinds()
        assert ViolationKind.CONTROL_FLOW_MISMATCH not in report.kinds()


class TestOdometer:
    def test_headline_discrepancy_values(self):
        buggy = corpus.buggy_advanced_composition(0.1, 10, 1e-6)
        correct = advanced_composition(0.1, 0.0, 10, 1e-6)
        assert buggy == pytest.approx(447.3, abs=0.1)
        assert correct == pytest.approx(1.767, abs=5e-3)
        assert buggy >= 100 * correct

    def test_k1_near_degenerate_case_passes(self):
        for broken in (True, False):
            case = corpus.get_case("odometer", "buggy" if broken else "fixed")

            def pipeline(data, epsilon, ctx):
                return corpus.run_odometer(data, epsilon, ctx, k=1, delta_slack=1e-6,
                                           broken_formula=broken)

            d, dp = case.build(5)[1:3]
            _, _, out, _ = run_pipeline_pair(pipeline, d, dp, seed=5, epsilon=0.1,
                                             registry=REG)
            answers, claim = out
            assert claim == pytest.approx(0.1)

    def test_loose_not_leaky(self):
        # the buggy odometer overstates the budget: eps_hat from the
        # composed analytic PLDs stays below even the correct claim
        case = corpus.get_case("odometer", "buggy")
        result = corpus.run_case(case, seed=5)
        assert result.eps_hat <= advanced_composition(0.1, 0.0, 10, 1e-6)
        assert ViolationKind.ACCOUNTING_DISCREPANCY in result.flagged_kinds


class TestNoisySgd:
    def test_replace_one_pair_passes_buggy_variant(self):
        # n is public under bounded adjacency, so deriving the batch size
        # from it leaks nothing
        case = corpus.get_case("noisy_sgd_lite", "buggy")
        pipe, d, _, _ = case.build(3)
        dp = gen_neighbors(d, AdjacencyModel.REPLACE_ONE, "replace_combined", 3, count=1)[0][1]
        report = audit_pair(pipe, d, dp)
        assert report.verdict == "pass"

    def test_add_remove_flags_buggy_only(self):
        for variant, expect in (("buggy", True), ("fixed", False)):
            case = corpus.get_case("noisy_sgd_lite", variant)
            result = corpus.run_case(case, seed=3)
            assert (ViolationKind.INVARIANCE_VIOLATION in result.flagged_kinds) == expect


class TestDomainInference:
    def test_buggy_passes_when_domain_unchanged(self):
        schema = [ColumnSpec("v", "int", 0, 9)]
        d = TabularDataset(schema, {"v": [1, 5, 9, 3]})
        dp = d.with_row_added((9,))  # max unchanged
        pipe = lambda dd, e, ctx: corpus.run_domain_inference(dd, e, ctx, 10, infer_domain=True)
        assert audit_pair(pipe, d, dp).verdict == "pass"

    def test_fixed_handles_out_of_domain_injection(self):
        schema = [ColumnSpec("v", "int", 0, 9)]
        d = TabularDataset(schema, {"v": [1, 5, 9, 3]})
        dp = d.with_row_added((99,))
        pipe = lambda dd, e, ctx: corpus.run_domain_inference(dd, e, ctx, 10, infer_domain=False)
        assert audit_pair(pipe, d, dp).verdict == "pass"


class TestDoubleSpend:
    def test_data_dependent_branch_control_flow(self):
        schema = corpus._double_spend_schema()
        d = TabularDataset(schema, {"x": [0.5, 1.0], "len": [1, 1]})
        dp = TabularDataset(schema, {"x": [0.5, 1.0, 1.0], "len": [1, 1, 2]})
        pipe = lambda dd, e, ctx: corpus.run_double_spend(dd, e, ctx, split_budget=False)
        t, tp = generate_traces(pipe, d, dp, seed=3, registry=REG)
        assert tp.stopped
        report = validate_records(t, tp, SPECS)
        assert ViolationKind.CONTROL_FLOW_MISMATCH in report.kinds()

    def test_budget_bands(self):
        buggy = corpus.run_case(corpus.get_case("double_spend", "buggy"), seed=11)
        fixed = corpus.run_case(corpus.get_case("double_spend", "fixed"), seed=11)
        assert buggy.eps_hat >= 1.5
        assert ViolationKind.ACCOUNTING_DISCREPANCY in buggy.flagged_kinds
        assert fixed.eps_hat <= 1.15
        assert not fixed.violations


class TestLinreg:
    def test_lower_bound_twice_gives_zero_sensitivity(self):
        case = corpus.get_case("linreg_objective", "buggy")
        result = corpus.run_case(case, seed=9)
        sens = [v for v in result.violations
                if v.kind == ViolationKind.SENSITIVITY_VIOLATION]
        assert sens and sens[0].declared == 0.0 and sens[0].measured > 0.0

    def test_fixed_uses_max_of_bounds(self):
        case = corpus.get_case("linreg_objective", "fixed")
        result = corpus.run_case(case, seed=9)
        assert not result.violations

    def test_symmetric_bounds_coincide(self):
        schema = [ColumnSpec("x", "real", -1.0, 1.0)]
        d = TabularDataset(schema, {"x": [0.5, -0.5, 0.1]})
        dp = d.with_row_replaced(0, (-1.0,))
        for lower_twice in (True, False):
            pipe = lambda dd, e, ctx: corpus.run_linreg_objective(
                dd, e, ctx, bounds=(-1.0, 1.0), lower_twice=lower_twice
            )
            assert audit_pair(pipe, d, dp).verdict == "pass"


class TestJam:
    def test_opposite_shift_exceeds_declared_two(self):
        case = corpus.get_case("jam_lite", "buggy")
        result = corpus.run_case(case, seed=4)
        sens = [v for v in result.violations
                if v.kind == ViolationKind.SENSITIVITY_VIOLATION]
        assert sens and sens[0].measured == pytest.approx(4.0) and sens[0].declared == 2.0

    def test_fixed_declares_four(self):
        case = corpus.get_case("jam_lite", "fixed")
        assert not corpus.run_case(case, seed=4).violations

    def test_same_direction_pair_stays_within_two(self):
        # when both error terms move together the score shift cancels
        schema = [ColumnSpec("a", "int", 0, 2), ColumnSpec("b", "int", 0, 2)]
        d = TabularDataset(schema, {"a": [0, 0, 1], "b": [1, 1, 2]})
        dp = d.with_row_replaced(0, (1, 1))
        ref = {
            c.name: np.bincount(d.column(c.name).astype(int), minlength=3).astype(float).tolist()
            for c in schema
        }
        pipe = lambda dd, e, ctx: corpus.run_jam_lite(
            dd, e, ctx, model_ref=ref, pub_ref=ref, declared_sens=2.0
        )
        assert audit_pair(pipe, d, dp).verdict == "pass"


class TestUnguardedInputs:
    schema = [ColumnSpec("x", "real", 0.0, 2.0)]

    def _pair(self, value):
        d = TabularDataset(self.schema, {"x": [1.0, 0.5]})
        return d, d.with_row_added((value,))

    @pytest.mark.parametrize("value", [float("nan"), float("inf"), float("-inf")])
    def test_unguarded_flagged(self, value):
        d, dp = self._pair(value)
        pipe = lambda dd, e, ctx: corpus.run_unguarded_inputs(dd, e, ctx, guarded=False)
        report = audit_pair(pipe, d, dp)
        assert ViolationKind.SENSITIVITY_VIOLATION in report.kinds()

    @pytest.mark.parametrize("value", [float("nan"), float("inf")])
    def test_guarded_rejects_controlled(self, value):
        d, dp = self._pair(value)
        pipe = lambda dd, e, ctx: corpus.run_unguarded_inputs(dd, e, ctx, guarded=True)
        with pytest.raises(InputDomainError):
            generate_traces(pipe, d, dp, seed=3, registry=REG)

    def test_guarded_rejection_spends_no_budget(self):
        from dpaudit.recorder import Auditor

        d, dp = self._pair(float("nan"))
        auditor = Auditor(seed=3, registry=REG)
        with pytest.raises(InputDomainError):
            with auditor.record() as ctx:
                corpus.run_unguarded_inputs(dp, 1.0, ctx, guarded=True)
        assert len(auditor.record_trace.entries) == 0

    def test_finite_inputs_identical_behavior(self):
        d, dp = self._pair(1.5)
        for guarded in (True, False):
            pipe = lambda dd, e, ctx: corpus.run_unguarded_inputs(dd, e, ctx, guarded=guarded)
            assert audit_pair(pipe, d, dp).verdict == "pass"


class TestMatrix:
    def test_rr_matrix_all_ok(self):
        rows = corpus.detection_matrix(seed=17, mode="rr")
        assert all(r.ok for r in rows)

    def test_full_matrix_all_ok_other_seed(self):
        rows = corpus.detection_matrix(seed=29, mode="full")
        assert all(r.ok for r in rows)

    def test_fault_injection_detected(self, monkeypatch):
        # a validator that stops flagging sensitivity violations must break
        # the matrix (self-test of the self-test)
        import dpaudit.validator as validator_module

        monkeypatch.setattr(validator_module, "SENSITIVITY_TOLERANCE", 1e12)
        rows = corpus.detection_matrix(seed=17, mode="rr")
        assert not all(r.ok for r in rows)
