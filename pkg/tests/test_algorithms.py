import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedlesam.algorithms import (
    ALGORITHMS,
    AlgorithmSpec,
    ClientState,
    CorrectionRule,
    LocalTrace,
    PerturbationRule,
    global_perturbation_estimate,
    gradient_eval_count,
    local_perturbation,
    local_round,
)
from fedlesam.data import make_quadratic_family
from fedlesam.models import Batch, ContractError, GradientOracle, ModelSpec, QuadBatch, init_params

Q1 = ModelSpec.quadratic(1)
HALF_W2 = QuadBatch(np.eye(1), np.zeros(1))  # F(w) = w^2 / 2


def run(name, w_t, batches, eta_l=0.1, rho=0.0, beta=None, state=None, control=None, model=Q1, **kw):
    spec = AlgorithmSpec.from_name(name, rho=rho, beta=beta)
    n = model.n_params
    state = state or ClientState.zeros(n)
    control = np.zeros(n) if control is None else control
    return local_round(spec, model, np.asarray(w_t, float), state, control, batches, eta_l, **kw)


class TestLocalPerturbation:
    def test_unit_scaling(self):
        assert np.allclose(local_perturbation(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])

    def test_zero_rho(self):
        assert np.array_equal(local_perturbation(np.array([3.0, 4.0]), 0.0), [0, 0])

    def test_degenerate_gradient(self):
        assert np.array_equal(local_perturbation(np.zeros(2), 0.5), [0, 0])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6), st.floats(1e-3, 10))
    def test_norm_is_rho(self, g, rho):
        g = np.array(g)
        d = local_perturbation(g, rho)
        if np.linalg.norm(g) >= 1e-12:
            assert np.linalg.norm(d) == pytest.approx(rho, rel=1e-12)
        else:
            assert not d.any()


class TestGlobalEstimate:
    def test_initial_zero_old_model(self):
        assert np.allclose(global_perturbation_estimate(np.zeros(2), np.array([3.0, 4.0]), 1.0), [-0.6, -0.8])

    def test_forced_direction(self):
        assert np.allclose(global_perturbation_estimate(np.array([2.0, 0]), np.array([1.0, 0]), 0.5), [0.5, 0])

    def test_equal_models(self):
        w = np.array([1.0, 2.0])
        assert not global_perturbation_estimate(w, w.copy(), 1.0).any()

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            global_perturbation_estimate(np.zeros(2), np.zeros(3), 1.0)


class TestLocalRound:
    def test_fedavg_single_step(self):
        w, _ = run("fedavg", [1.0], [HALF_W2])
        assert w[0] == pytest.approx(0.9, abs=1e-15)

    def test_fedsam_hand_trace(self):
        # delta = 0.1 * sign(1); gradient at 1.1 is 1.1; 1 - 0.1 * 1.1 = 0.89
        w, _ = run("fedsam", [1.0], [HALF_W2], rho=0.1)
        assert w[0] == pytest.approx(0.89, abs=1e-15)

    def test_fedlesam_uses_old_model_direction(self):
        st_ = ClientState(np.array([2.0]), np.zeros(1), np.zeros(1))
        # delta = +0.1; gradient at 1.1 is 1.1
        w, new = run("fedlesam", [1.0], [HALF_W2], rho=0.1, state=st_)
        assert w[0] == pytest.approx(0.89, abs=1e-15)
        assert new.w_old[0] == 1.0
        assert st_.w_old[0] == 2.0  # input state untouched

    def test_rho_zero_reductions_bitwise(self):
        prob = make_quadratic_family(3, 4, 1.0, 0)
        model = ModelSpec.quadratic(4)
        batches = [prob.client_batch(1)] * 5
        w_t = np.array([0.3, -1.0, 2.0, 0.5])
        state = ClientState(np.array([1.0, 0, 0, 0]), np.array([0.1, 0.2, -0.1, 0.0]), np.array([0.05, 0, 0.1, 0]))
        control = np.array([0.3, 0.0, 0.1, -0.2])
        pairs = [("fedlesam", "fedavg"), ("fedlesam-s", "scaffold"), ("fedgamma", "scaffold"),
                 ("fedlesam-d", "feddyn"), ("fedsam", "fedavg")]
        for a, b in pairs:
            beta = 10.0 if ALGORITHMS[a][1] == "dyn" else None
            wa, sa = run(a, w_t, batches, eta_l=0.05, rho=0.0, beta=beta, state=state, control=control, model=model)
            wb, sb = run(b, w_t, batches, eta_l=0.05, beta=beta, state=state, control=control, model=model)
            assert np.array_equal(wa, wb), a
            assert np.array_equal(sa.c_i, sb.c_i) and np.array_equal(sa.lam_i, sb.lam_i)

    def test_global_perturbation_constant_within_round(self):
        model = ModelSpec.mlp(2, 3, 2)
        rng = np.random.default_rng(0)
        batches = [Batch(rng.standard_normal((4, 2)), rng.integers(0, 2, 4)) for _ in range(6)]
        w_t = init_params(model, 0)
        state = ClientState(init_params(model, 1), np.zeros(model.n_params), np.zeros(model.n_params))
        trace = LocalTrace()
        run("fedlesam", w_t, batches, rho=0.05, state=state, model=model, trace=trace)
        assert len(trace.directions) == 6 and len(trace.iterates) == 6
        assert all(np.array_equal(d, trace.directions[0]) for d in trace.directions)
        assert np.linalg.norm(trace.directions[0]) == pytest.approx(1.0)

    def test_local_perturbation_follows_current_gradient(self):
        model = ModelSpec.mlp(2, 3, 2)
        rng = np.random.default_rng(1)
        batches = [Batch(rng.standard_normal((4, 2)), rng.integers(0, 2, 4)) for _ in range(3)]
        trace = LocalTrace()
        run("fedsam", init_params(model, 0), batches, rho=0.05, model=model, trace=trace)
        assert not np.array_equal(trace.directions[0], trace.directions[1])

    def test_scaffold_step_and_control_update(self):
        # w <- w - eta (g - C_i + C); C_i <- C_i - C + (w_t - w_E) / (eta E)
        st_ = ClientState(np.zeros(1), np.array([0.5]), np.zeros(1))
        C = np.array([0.2])
        w, new = run("scaffold", [1.0], [HALF_W2, HALF_W2], state=st_, control=C)
        w1 = 1.0 - 0.1 * (1.0 - 0.5 + 0.2)
        w2 = w1 - 0.1 * (w1 - 0.5 + 0.2)
        assert w[0] == pytest.approx(w2, abs=1e-15)
        assert new.c_i[0] == pytest.approx(0.5 - 0.2 + (1.0 - w2) / (0.1 * 2), abs=1e-14)

    def test_scaffold_control_tracks_client_gradient(self):
        # with one step, C_i becomes exactly the client's gradient at w_t
        prob = make_quadratic_family(2, 3, 1.0, 0)
        model = ModelSpec.quadratic(3)
        w_t = np.array([0.5, -0.5, 1.0])
        st_ = ClientState(np.zeros(3), np.array([1.0, 2.0, 3.0]), np.zeros(3))
        _, new = run("scaffold", w_t, [prob.client_batch(0)], state=st_, control=np.array([0.1, 0, 0]), model=model)
        assert np.allclose(new.c_i, prob.client_grads(w_t)[0], atol=1e-12)

    def test_dyn_step_and_dual_update(self):
        st_ = ClientState(np.zeros(1), np.zeros(1), np.array([0.3]))
        w, new = run("feddyn", [1.0], [HALF_W2, HALF_W2], beta=2.0, state=st_)
        w1 = 1.0 - 0.1 * 1.0 - 0.1 * (0.3 + 0.5 * 0.0)
        w2 = w1 - 0.1 * w1 - 0.1 * (0.3 + 0.5 * (w1 - 1.0))
        assert w[0] == pytest.approx(w2, abs=1e-15)
        assert new.lam_i[0] == pytest.approx(0.3 - 0.5 * (w2 - 1.0), abs=1e-15)

    def test_eval_counter(self):
        prob = make_quadratic_family(1, 2, 0.0, 0)
        model = ModelSpec.quadratic(2)
        for name in ALGORITHMS:
            spec = AlgorithmSpec.from_name(name, rho=0.05, beta=10.0)
            oracle = GradientOracle(model)
            local_round(spec, model, np.ones(2), ClientState.zeros(2), np.zeros(2),
                        [prob.client_batch(0)] * 7, 0.1, oracle=oracle)
            assert oracle.calls == 7 * gradient_eval_count(spec), name

    def test_contract_errors(self):
        with pytest.raises(ContractError):
            run("fedavg", [1.0], [])
        with pytest.raises(ContractError):
            run("fedavg", [1.0], [HALF_W2], eta_l=0.0)
        with pytest.raises(ContractError):
            run("fedavg", [1.0, 2.0], [HALF_W2])


class TestSpecs:
    @pytest.mark.parametrize("name,count", [("fedsam", 2), ("fedlesam", 1), ("fedavg", 1), ("fedgamma", 2),
                                            ("scaffold", 1), ("feddyn", 1), ("fedlesam-s", 1), ("fedlesam-d", 1)])
    def test_gradient_eval_count(self, name, count):
        assert gradient_eval_count(AlgorithmSpec.from_name(name, rho=0.1, beta=1.0)) == count

    def test_names_roundtrip(self):
        for name in ALGORITHMS:
            assert AlgorithmSpec.from_name(name, rho=0.1, beta=1.0).name == name
        assert len(ALGORITHMS) == 8

    def test_unnamed_combination_rejected(self):
        with pytest.raises(ContractError):
            AlgorithmSpec(PerturbationRule("local", 0.1), CorrectionRule("dyn", 1.0))

    def test_unknown_name(self):
        with pytest.raises(ContractError, match="unsupported"):
            AlgorithmSpec.from_name("fedsmoo")

    def test_rule_invariants(self):
        with pytest.raises(ContractError):
            PerturbationRule("local", -0.1)
        with pytest.raises(ContractError):
            PerturbationRule("global", float("inf"))
        with pytest.raises(ContractError):
            CorrectionRule("dyn", 0.0)
        with pytest.raises(ContractError):
            CorrectionRule("dyn", None)

    def test_client_state_zero_init(self):
        s = ClientState.zeros(4)
        assert not (s.w_old.any() or s.c_i.any() or s.lam_i.any())
