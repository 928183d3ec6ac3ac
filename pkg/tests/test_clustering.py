import numpy as np
import pytest

from jstn import autodiff as ad
from jstn.clustering import clustering_cost, kmeans, kmeanspp_seed, lloyd, select_representatives
from jstn.errors import DataError
from jstn.losses import representative_alignment_loss


def test_seed_all_distinct_points_when_r_matches():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 5.0]])
    idx = kmeanspp_seed(pts, 3, np.random.default_rng(0))
    assert sorted(idx.tolist()) == [0, 1, 2]
    assert clustering_cost(pts, pts[idx]) == 0.0


def test_seed_r1_is_uniform():
    pts = np.arange(4.0).reshape(4, 1)
    counts = np.zeros(4)
    for s in range(4000):
        counts[kmeanspp_seed(pts, 1, np.random.default_rng(s))[0]] += 1
    assert np.all(np.abs(counts / 4000 - 0.25) < 0.03)


def test_seed_fewer_distinct_points_than_r():
    pts = np.array([[1.0], [1.0], [2.0], [2.0]])
    idx = kmeanspp_seed(pts, 3, np.random.default_rng(0))
    assert len(idx) == 2
    assert sorted(pts[idx, 0].tolist()) == [1.0, 2.0]


def test_seed_errors():
    with pytest.raises(DataError):
        kmeanspp_seed(np.zeros((0, 2)), 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        kmeanspp_seed(np.zeros((3, 2)), 0, np.random.default_rng(0))


def test_d2_sampling_on_three_points_monte_carlo():
    pts = np.array([[0.0], [1.0], [100.0]])
    # exact D^2 probability that the pair contains 100 and one of {0, 1}:
    # first pick 0 -> 100 w.p. 10000/10001; first pick 1 -> 100 w.p. 9801/9802; first pick 100 -> always
    exact = (10000 / 10001 + 9801 / 9802 + 1.0) / 3
    hits = 0
    for s in range(1000):
        idx = kmeanspp_seed(pts, 2, np.random.default_rng(s))
        vals = set(pts[idx, 0].tolist())
        hits += (100.0 in vals) and bool(vals & {0.0, 1.0})
    assert exact >= 0.98
    assert hits / 1000 >= 0.98


def test_seeding_deterministic():
    pts = np.random.default_rng(1).standard_normal((40, 3))
    a = kmeanspp_seed(pts, 4, np.random.default_rng(9))
    b = kmeanspp_seed(pts, 4, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_lloyd_optimal_centers_do_not_move():
    pts = np.array([[0.0], [2.0], [10.0], [12.0]])
    res = lloyd(pts, np.array([[1.0], [11.0]]))
    np.testing.assert_array_equal(res.centers, [[1.0], [11.0]])
    assert res.n_iter == 1
    assert res.costs[0] == res.costs[-1]


def test_lloyd_two_blobs_recovers_means():
    rng = np.random.default_rng(2)
    a = rng.normal(0, 0.3, (50, 2))
    b = rng.normal(0, 0.3, (60, 2)) + [20.0, 5.0]
    pts = np.vstack([a, b])
    res = kmeans(pts, 2, np.random.default_rng(0))
    centers = res.centers[np.argsort(res.centers[:, 0])]
    np.testing.assert_allclose(centers[0], a.mean(axis=0), atol=1e-6)
    np.testing.assert_allclose(centers[1], b.mean(axis=0), atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_lloyd_cost_monotone_and_below_seeding(seed):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((80, 3))
    init = pts[kmeanspp_seed(pts, 4, rng)]
    res = lloyd(pts, init)
    assert all(b <= a + 1e-9 for a, b in zip(res.costs, res.costs[1:]))
    assert clustering_cost(pts, res.centers) <= clustering_cost(pts, init) + 1e-9


def test_lloyd_reseeds_empty_cluster():
    pts = np.array([[0.0], [0.1], [10.0], [10.1]])
    res = lloyd(pts, np.array([[0.05], [500.0]]))
    assert len(set(res.assign.tolist())) == 2


def test_select_single_member_class():
    f = np.array([[1.0, 2.0], [5.0, 5.0], [6.0, 5.0]])
    reps = select_representatives(f, np.array([0, 1, 1]), 3, 3, np.random.default_rng(0))
    assert set(reps) == {0, 1}
    np.testing.assert_array_equal(reps[0].reps, [[1.0, 2.0]])
    assert [m.tolist() for m in reps[0].members] == [[0]]


def test_reps_are_member_means_in_hull():
    rng = np.random.default_rng(3)
    f = rng.standard_normal((60, 3))
    y = rng.integers(0, 3, 60)
    reps = select_representatives(f, y, 3, 3, np.random.default_rng(1))
    for k, rs in reps.items():
        assert rs.reps.shape[0] <= 3
        for r, members in zip(rs.reps, rs.members):
            assert np.all(y[members] == k)
            np.testing.assert_allclose(r, f[members].mean(axis=0), atol=1e-12)
            lo, hi = f[y == k].min(axis=0), f[y == k].max(axis=0)
            assert np.all(r >= lo - 1e-12) and np.all(r <= hi + 1e-12)
        covered = np.sort(np.concatenate(rs.members))
        np.testing.assert_array_equal(covered, np.flatnonzero(y == k))


def test_select_deterministic():
    rng = np.random.default_rng(4)
    f, y = rng.standard_normal((50, 3)), rng.integers(0, 4, 50)
    a = select_representatives(f, y, 4, 3, np.random.default_rng(5))
    b = select_representatives(f, y, 4, 3, np.random.default_rng(5))
    for k in a:
        np.testing.assert_array_equal(a[k].reps, b[k].reps)


def test_averaging_matrix_reproduces_reps():
    rng = np.random.default_rng(6)
    f, y = rng.standard_normal((30, 2)), rng.integers(0, 2, 30)
    reps = select_representatives(f, y, 2, 3, np.random.default_rng(0))
    for rs in reps.values():
        np.testing.assert_allclose(rs.averaging_matrix(30) @ f, rs.reps, atol=1e-12)


def test_member_perturbation_moves_rep_by_inverse_cluster_size():
    rng = np.random.default_rng(7)
    fS = rng.standard_normal((12, 2))
    fT = rng.standard_normal((9, 2))
    yS, yT = np.zeros(12, int), np.zeros(9, int)
    rS = select_representatives(fS, yS, 1, 2, np.random.default_rng(0))
    rT = select_representatives(fT, yT, 1, 2, np.random.default_rng(0))
    S = ad.parameter(fS)

    def loss():
        reps_s = {0: ad.matmul(ad.constant(rS[0].averaging_matrix(12)), S)}
        reps_t = {0: ad.constant(rT[0].reps)}
        return representative_alignment_loss(reps_s, reps_t)

    ad.backward(loss())
    num = ad.numeric_grad(lambda: loss().item(), S)
    assert ad.relative_error(S.grad, num) < 1e-6
    # the rep moves by delta / |cluster| when one member moves by delta
    member = rS[0].members[0][0]
    A = rS[0].averaging_matrix(12)
    shifted = fS.copy()
    shifted[member] += [1e-3, 0.0]
    moved = A @ shifted - A @ fS
    np.testing.assert_allclose(moved[0], [1e-3 / len(rS[0].members[0]), 0.0], atol=1e-15)
