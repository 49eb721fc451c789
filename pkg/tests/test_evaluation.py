import numpy as np
import pytest

from advpose import quatgeom as qg
from advpose.config import RefineConfig
from advpose.evaluation import Metrics, discriminator_accuracy, evaluate, relative_improvement
from advpose.training import EmptyDataset


class PerfectRegressor:
    """Test double that returns each frame's ground truth."""

    mode = "quat"

    def __init__(self, samples):
        self._by_obs = {obs.tobytes(): s.pose_gt for s, obs in zip(samples, [s.observation for s in samples])}

    def regress(self, observations, degenerate="raise"):
        from advpose.models import RegressedBatch

        obs = np.atleast_2d(observations)
        poses = [self._by_obs[row.tobytes()] for row in obs]
        rot = np.stack([p.q for p in poses])
        t = np.stack([p.t for p in poses])
        return RegressedBatch(poses=poses, rot=rot, t=t)


class TestRelativeImprovement:
    def test_heads_style_numbers(self):
        # medians 14.1 -> 12.4 must report as 12.06% relative improvement
        assert relative_improvement(14.1, 12.4) * 100 == pytest.approx(12.0567, abs=1e-3)

    def test_zero_before_guard(self):
        assert relative_improvement(0.0, 0.0) == 0.0

    def test_median_convention(self):
        assert float(np.median([1.0, 2.0, 100.0])) == 2.0
        assert float(np.median([1.0, 2.0, 3.0, 100.0])) == 2.5  # mean of central pair


class TestEvaluate:
    def test_perfect_regressor_zero_errors(self, toy_dataset):
        samples = toy_dataset.test[:10]
        m = evaluate(PerfectRegressor(samples), samples)
        assert m.median("rot_before") < 1e-5
        assert m.median("trans_before") == 0.0

    def test_no_refine_before_equals_after(self, trained_toy, toy_dataset):
        m = evaluate(trained_toy.regressor, toy_dataset.test)
        assert not m.refined
        np.testing.assert_array_equal(m.rot_before, m.rot_after)
        np.testing.assert_array_equal(m.trans_before, m.trans_after)

    def test_refined_metrics_shape_and_reasons(self, trained_toy, toy_dataset):
        cfg = RefineConfig(step_size=1e-3, max_iters=10)
        m = evaluate(trained_toy.regressor, toy_dataset.test, disc=trained_toy.disc, refine=cfg, collect_traces=True)
        assert m.refined
        assert m.n_frames == len(toy_dataset.test)
        assert len(m.rot_after) == m.n_frames
        assert sum(m.stop_reasons.values()) == m.n_frames
        assert set(m.stop_reasons) <= {"converged", "max_iters"}
        assert len(m.traces) == m.n_frames

    def test_summary_recomputable_from_arrays(self, trained_toy, toy_dataset):
        m = evaluate(trained_toy.regressor, toy_dataset.test)
        s = m.summary()
        assert s["median_rot_before_deg"] == float(np.median(m.rot_before))
        assert s["mean_trans_before"] == float(np.mean(m.trans_before))

    def test_empty_split(self, trained_toy):
        with pytest.raises(EmptyDataset):
            evaluate(trained_toy.regressor, [])

    def test_metrics_median_matches_numpy(self):
        m = Metrics(
            rot_before=np.array([1.0, 2.0, 100.0]),
            trans_before=np.array([1.0, 2.0, 3.0]),
            rot_after=np.array([1.0, 1.5, 90.0]),
            trans_after=np.array([1.0, 1.0, 1.0]),
            refined=True,
        )
        assert m.median("rot_before") == 2.0
        assert m.rot_improvement == pytest.approx((2.0 - 1.5) / 2.0)


class TestDiscAccuracy:
    def test_bounds_and_fields(self, trained_toy, toy_dataset):
        acc = discriminator_accuracy(trained_toy.regressor, trained_toy.disc, toy_dataset.test)
        assert set(acc) == {"real", "fake", "mean"}
        for v in acc.values():
            assert 0.0 <= v <= 1.0
        assert acc["mean"] == pytest.approx(0.5 * (acc["real"] + acc["fake"]))
