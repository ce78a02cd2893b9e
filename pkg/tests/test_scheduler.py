import itertools
import math

import numpy as np
import pytest

from sparsectl.core import (
    ActuatorSchedule,
    LinearSystem,
    controllability_matrix,
    gramian,
    numerical_rank,
    simulate,
)
from sparsectl.errors import InputError, NotControllableError, PreconditionError, SearchSpaceTooLarge
from sparsectl.scheduler import (
    GREEDY_REFRESH_EVERY,
    SensorSchedule,
    controllable_schedule,
    energy_aware_controllable_schedule,
    estimate_x0,
    feasible_set_size,
    greedy_candidate_cost,
    iter_controllable_schedule,
    li_extension,
    observability_matrix,
    optimal_energy_bruteforce,
    rbn_greedy,
    rbn_greedy_trace,
    sensor_schedule,
)
from sparsectl.systems import erdos_renyi_system


def random_system(rng, n, m, p=None, er=True):
    A = erdos_renyi_system(n, rng) if er else rng.standard_normal((n, n)) / math.sqrt(n)
    C = None if p is None else rng.standard_normal((p, n))
    return LinearSystem(A, rng.standard_normal((n, m)), C)


def trace_inv(sys, sched):
    return float(np.trace(np.linalg.inv(gramian(sys, sched).W)))


# li_extension --------------------------------------------------------------

def test_li_extension_identity_lowest_index():
    assert li_extension(None, np.eye(3), 2) == [0, 1]


def test_li_extension_inside_span_is_empty():
    basis = np.eye(3)[:, :2]
    cands = np.array([[1.0, 2.0], [3.0, -1.0], [0.0, 0.0]])
    assert li_extension(basis, cands, 2) == []


def test_li_extension_skips_parallel_columns():
    e1, e2 = np.eye(3)[:, 0], np.eye(3)[:, 1]
    cands = np.column_stack([e1, 2 * e1, e2])
    assert li_extension(e1[:, None], cands, 2) == [2]


def test_li_extension_limit_and_rank_gain():
    rng = np.random.default_rng(0)
    cands = rng.standard_normal((5, 3)) @ rng.standard_normal((3, 8))  # rank 3
    assert li_extension(None, cands, 0) == []
    got = li_extension(None, cands, 10)
    assert len(got) == 3
    assert numerical_rank(cands[:, got]) == 3
    with pytest.raises(InputError):
        li_extension(None, cands, -1)


# controllable_schedule -------------------------------------------------------

def test_controllable_schedule_identity_example():
    sched = controllable_schedule(LinearSystem(np.eye(4), np.eye(4)), 2, 2)
    assert sched.sets == ((0, 1), (2, 3))
    assert sched.n_pairs == 4


def test_controllable_schedule_single_step():
    rng = np.random.default_rng(1)
    sys = random_system(rng, 5, 8)
    sched = controllable_schedule(sys, 5, 1)
    assert sched.n_pairs == 5
    assert numerical_rank(sys.B[:, list(sched.sets[0])]) == 5


@pytest.mark.parametrize(
    "B,s,K,cond",
    [
        (np.eye(3)[:, :2], 2, 2, "rank_B"),
        (np.eye(3), 0, 3, "sparsity"),
        (np.eye(3), 4, 1, "sparsity"),
        (np.eye(3), 1, 2, "horizon"),
    ],
)
def test_controllable_schedule_preconditions(B, s, K, cond):
    with pytest.raises(PreconditionError) as exc:
        controllable_schedule(LinearSystem(np.eye(3), B), s, K)
    assert exc.value.condition == cond


def test_controllable_schedule_sparsity_below_rank_deficiency():
    with pytest.raises(PreconditionError) as exc:
        controllable_schedule(LinearSystem(np.zeros((3, 3)), np.eye(3)), 2, 2)
    assert exc.value.condition == "sparsity"


def test_controllable_schedule_random_property():
    rng = np.random.default_rng(2)
    for _ in range(60):
        n = int(rng.integers(2, 16))
        m = int(rng.integers(n, 2 * n + 1))
        sys = random_system(rng, n, m)
        s_min = max(1, n - numerical_rank(sys.A))
        for s in {s_min, s_min + 1}:
            if s > m:
                continue
            K = math.ceil(n / s)
            sched = controllable_schedule(sys, s, K)
            assert sched.K == K
            assert sched.n_pairs == n
            assert all(len(S) <= s for S in sched.sets)
            assert numerical_rank(controllability_matrix(sys, sched)) == n


def test_scheduler_rank_accounting():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(3, 12))
        m = int(rng.integers(n, 2 * n))
        sys = random_system(rng, n, m)
        s = max(2, n - numerical_rank(sys.A))
        K = math.ceil(n / s) + 1
        prev = 0
        for state in iter_controllable_schedule(sys, s, K):
            size = len(state.selected)
            assert size == min(state.rank_AiB, prev + s) or size == n
            k = K - 1 - state.i
            assert sum(1 for kk, _ in state.selected if kk == k) <= s
            cols = [np.linalg.matrix_power(sys.A, K - 1 - kk) @ sys.B[:, j] for kk, j in state.selected]
            assert numerical_rank(np.column_stack(cols)) == size
            np.testing.assert_allclose(state.basis.T @ state.basis, np.eye(size), atol=1e-10)
            prev = size


# energy-aware variant ------------------------------------------------------

def test_energy_aware_identity_tie_break():
    sched = energy_aware_controllable_schedule(LinearSystem(np.eye(4), np.eye(4)), 2, 2)
    assert sched.sets == ((0, 1), (2, 3))


def test_energy_aware_rank_and_comparison():
    rng = np.random.default_rng(4)
    better = 0
    trials = 50
    for _ in range(trials):
        sys = LinearSystem(rng.standard_normal((3, 3)) / math.sqrt(3), rng.standard_normal((3, 4)))
        plain = controllable_schedule(sys, 1, 3)
        aware = energy_aware_controllable_schedule(sys, 1, 3)
        assert numerical_rank(controllability_matrix(sys, aware)) == 3
        assert aware.n_pairs == 3
        better += trace_inv(sys, aware) <= trace_inv(sys, plain) * (1 + 1e-9)
    # paired comparison is reported rather than asserted
    print(f"energy-aware at least as good in {better}/{trials} trials")


def test_energy_aware_rejects_bad_eps():
    with pytest.raises(InputError):
        energy_aware_controllable_schedule(LinearSystem(np.eye(2), np.eye(2)), 1, 2, eps=0.0)


# greedy --------------------------------------------------------------------

def test_greedy_candidate_cost_examples():
    assert greedy_candidate_cost(np.eye(2), np.zeros(2)) == pytest.approx(2.0)
    assert greedy_candidate_cost(np.eye(2), np.array([1.0, 0.0])) == pytest.approx(1.5)


def test_greedy_candidate_cost_matches_eigen_oracle():
    rng = np.random.default_rng(5)
    for _ in range(20):
        G = rng.standard_normal((6, 9))
        W = G @ G.T
        c = rng.standard_normal(6)
        oracle = float(np.sum(1.0 / np.linalg.eigvalsh(W + np.outer(c, c))))
        assert greedy_candidate_cost(np.linalg.inv(W), c) == pytest.approx(oracle, rel=1e-9)


def test_rbn_greedy_no_free_slots():
    sys = LinearSystem(np.eye(4), np.eye(4))
    G0 = controllable_schedule(sys, 2, 2)
    assert rbn_greedy(sys, 2, 2, G0) == G0


def test_rbn_greedy_rejects_rank_deficient_start():
    sys = LinearSystem(np.eye(3), np.eye(3))
    with pytest.raises(NotControllableError):
        rbn_greedy(sys, 2, 2, ActuatorSchedule(((0,), (1,)), 2))
    with pytest.raises(InputError):
        rbn_greedy(sys, 2, 3, ActuatorSchedule(((0,), (1,)), 2))


def test_rbn_greedy_properties():
    rng = np.random.default_rng(6)
    for _ in range(30):
        n = int(rng.integers(3, 12))
        m = int(rng.integers(n, 2 * n + 1))
        sys = random_system(rng, n, m)
        s = max(2, n - numerical_rank(sys.A))
        K = math.ceil(n / s) + int(rng.integers(0, 3))
        G0 = controllable_schedule(sys, s, K)
        run = rbn_greedy_trace(sys, s, K, G0)
        G = run.schedule
        assert set(G0.pairs()) <= set(G.pairs())
        assert G.n_pairs == K * s
        assert all(len(S) == s for S in G.sets)
        costs = np.array(run.costs)
        assert np.all(np.diff(costs) <= 1e-12 * np.maximum(1.0, costs[:-1]))
        # replay: each recorded cost matches a direct recomputation
        pairs = list(G0.pairs())
        for r, pair in enumerate(run.added, start=1):
            pairs.append(pair)
            direct = trace_inv(sys, ActuatorSchedule.from_pairs(pairs, K, s))
            assert costs[r] == pytest.approx(direct, rel=1e-8)


def test_rbn_greedy_picks_best_single_pair():
    rng = np.random.default_rng(7)
    sys = LinearSystem(rng.standard_normal((3, 3)) / 2, rng.standard_normal((3, 4)))
    G0 = controllable_schedule(sys, 2, 2)
    run = rbn_greedy_trace(sys, 2, 2, G0)
    first = run.added[0]
    best = min(
        ((k, j) for k in range(2) for j in range(4) if (k, j) not in G0.pairs() and len(G0.sets[k]) < 2),
        key=lambda p: trace_inv(sys, ActuatorSchedule.from_pairs(list(G0.pairs()) + [p], 2, 2)),
    )
    assert first == best


def test_rbn_greedy_refresh_path():
    rng = np.random.default_rng(8)
    n, m = 6, 30
    sys = LinearSystem(erdos_renyi_system(n, rng), rng.standard_normal((n, m)))
    s, K = 20, 4
    G0 = controllable_schedule(sys, s, K)
    run = rbn_greedy_trace(sys, s, K, G0)
    assert len(run.added) > GREEDY_REFRESH_EVERY
    assert run.costs[-1] == pytest.approx(trace_inv(sys, run.schedule), rel=1e-9)


def test_identity_greedy_is_balanced():
    for m in (6, 10):
        sys = LinearSystem(np.eye(m), np.eye(m))
        for s in range(1, m + 1):
            G = rbn_greedy(sys, s, m, controllable_schedule(sys, s, m))
            counts = np.bincount([j for _, j in G.pairs()], minlength=m)
            assert np.all(counts == s)


# brute force / matroid ---------------------------------------------------------

def test_feasible_set_size():
    assert feasible_set_size(4, 3, 2) == 1331
    base = ActuatorSchedule(((0,), (), (1, 2)), 2)
    assert feasible_set_size(4, 3, 2, base) == 4 * 11 * 1


def test_bruteforce_matches_manual_enumeration():
    rng = np.random.default_rng(9)
    sys = LinearSystem(rng.standard_normal((2, 2)), rng.standard_normal((2, 3)))
    E, sched = optimal_energy_bruteforce(sys, 1, 2)
    best = math.inf
    for a in [(), (0,), (1,), (2,)]:
        for b in [(), (0,), (1,), (2,)]:
            cand = ActuatorSchedule((a, b), 1)
            rep = gramian(sys, cand)
            if rep.full_rank:
                best = min(best, rep.trace_inverse)
    assert E == pytest.approx(best, rel=1e-12)
    assert trace_inv(sys, sched) == pytest.approx(E, rel=1e-10)


def test_bruteforce_limits():
    sys = LinearSystem(np.eye(3), np.eye(3))
    with pytest.raises(SearchSpaceTooLarge):
        optimal_energy_bruteforce(sys, 2, 3, limit=100)
    with pytest.raises(NotControllableError):
        optimal_energy_bruteforce(LinearSystem(np.eye(3), np.eye(3)), 1, 2)


def test_feasible_sets_form_a_matroid():
    m, K, s = 3, 2, 1
    ground = [(k, j) for k in range(K) for j in range(m)]

    def feasible(T):
        return all(sum(1 for kk, _ in T if kk == k) <= s for k in range(K))

    sets = [frozenset(c) for r in range(len(ground) + 1) for c in itertools.combinations(ground, r)]
    indep = [T for T in sets if feasible(T)]
    for A in indep:
        for B in indep:
            if len(B) > len(A):
                assert any(feasible(A | {e}) for e in B - A)
        for e in A:
            assert feasible(A - {e})


# sensors -------------------------------------------------------------------

def test_sensor_schedule_identity():
    sys = LinearSystem(np.eye(3), np.eye(3), np.eye(3))
    sched = sensor_schedule(sys, 3, 1)
    assert isinstance(sched, SensorSchedule)
    assert sched.sets == ((0, 1, 2),)


def test_sensor_schedule_random_full_rank():
    rng = np.random.default_rng(10)
    for _ in range(100):
        n = int(rng.integers(2, 10))
        sys = LinearSystem(erdos_renyi_system(n, rng), np.eye(n), rng.standard_normal((n + 2, n)))
        s = max(2, n - numerical_rank(sys.A))
        sched = sensor_schedule(sys, s, math.ceil(n / s))
        assert numerical_rank(observability_matrix(sys, sched)) == n


def test_sensor_schedule_errors():
    sys = LinearSystem(np.eye(3), np.eye(3), np.eye(3))
    with pytest.raises(PreconditionError):
        sensor_schedule(sys, 0, 3)
    with pytest.raises(PreconditionError):
        sensor_schedule(LinearSystem(np.eye(3), np.eye(3), np.eye(3)[:2]), 2, 2)
    with pytest.raises(InputError):
        sensor_schedule(LinearSystem(np.eye(3), np.eye(3)), 1, 3)


def test_estimate_x0_direct_measurement():
    sys = LinearSystem(np.eye(3), np.eye(3), np.eye(3))
    y0 = np.array([1.0, -1.0, 2.0])
    np.testing.assert_allclose(estimate_x0(sys, SensorSchedule(((0, 1, 2),), 3), [y0]), y0)


def test_estimate_x0_noiseless_recovery_with_inputs():
    rng = np.random.default_rng(11)
    for _ in range(50):
        n = int(rng.integers(2, 10))
        m = int(rng.integers(1, n + 1))
        A = rng.standard_normal((n, n)) / math.sqrt(n)
        sys = LinearSystem(A, rng.standard_normal((n, m)), rng.standard_normal((n, n)))
        s = max(1, n - numerical_rank(A))
        sched = sensor_schedule(sys, s, math.ceil(n / s))
        K = sched.K
        x0 = rng.standard_normal(n)
        U = rng.standard_normal((K, m))
        traj = simulate(sys, x0, U)
        scheduled = [traj.measurements[k][list(S)] for k, S in enumerate(sched.sets)]
        for meas in (traj.measurements[:K], scheduled):
            est = estimate_x0(sys, sched, meas, applied_inputs=U)
            assert np.linalg.norm(est - x0) <= 1e-8 * (1 + np.linalg.norm(x0))


def test_estimate_x0_rank_deficient_is_consistent():
    rng = np.random.default_rng(12)
    sys = LinearSystem(np.eye(3), np.eye(3), rng.standard_normal((3, 3)))
    sched = SensorSchedule(((0,), (1,)), 1)
    x0 = rng.standard_normal(3)
    traj = simulate(sys, x0, np.zeros((2, 3)))
    est = estimate_x0(sys, sched, traj.measurements[:2])
    O = observability_matrix(sys, sched)
    y = np.array([traj.measurements[0][0], traj.measurements[1][1]])
    np.testing.assert_allclose(O @ est, y, atol=1e-8)


def test_estimate_x0_dimension_checks():
    sys = LinearSystem(np.eye(2), np.eye(2), np.eye(2))
    sched = SensorSchedule(((0,), (1,)), 1)
    with pytest.raises(InputError):
        estimate_x0(sys, sched, [np.zeros(2)])
    with pytest.raises(InputError):
        estimate_x0(sys, sched, [np.zeros(3), np.zeros(2)])
