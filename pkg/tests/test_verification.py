"""
Tests for the gradient verification suite's composite checks
"""
import pytest

from src.exceptions import ConfigError
from src.services.verification import DEEP_CHECKS, DEEP_TOLERANCE, OP_TOLERANCE, GradCheckSuite

COMPOSITE_CHECKS = sorted(GradCheckSuite().composite_checks())


class TestCompositeChecks:
    """Encoders, losses and the whole model against central differences"""

    def test_names(self):
        """Every model component has a named check"""
        assert set(COMPOSITE_CHECKS) == {
            "text_encoder", "lcf_gate", "sem_fuse", "masked_avg_pool", "projection", "contrastive_loss",
            "seg_loss", "decoder", "vision_encoder", "end_to_end", "joint_loss",
        }

    def test_tolerances(self):
        """Whole-model checks get the looser bound"""
        suite = GradCheckSuite()
        assert DEEP_CHECKS <= set(COMPOSITE_CHECKS)
        for name in COMPOSITE_CHECKS:
            expected = DEEP_TOLERANCE if name in DEEP_CHECKS else OP_TOLERANCE
            assert suite.tolerance_of(name) == expected

    @pytest.mark.gradcheck
    @pytest.mark.slow
    @pytest.mark.parametrize("name", COMPOSITE_CHECKS)
    def test_composite_backward(self, name):
        """Tape gradients of each composite agree with finite differences"""
        suite = GradCheckSuite(seed=0)
        error = suite.composite_checks()[name]()
        assert error < suite.tolerance_of(name)

    def test_run_reports_results(self):
        """run() returns one passing result per selected check"""
        results = GradCheckSuite(seed=0).run(only=["masked_avg_pool", "sigmoid"])
        assert [r.name for r in results] == ["sigmoid", "masked_avg_pool"]
        assert all(r.passed for r in results)

    def test_unknown_name(self):
        """Selecting a check that does not exist is a configuration error"""
        with pytest.raises(ConfigError):
            GradCheckSuite().run(only=["cosh"])
