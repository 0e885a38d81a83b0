"""Unit tests for the ablation presets and report arithmetic."""

import pytest

from ai.metrics import MetricReport
from core.errors import ConfigurationError
from training.ablation import (
    PRESETS,
    AblationReport,
    AblationRow,
    RowResult,
    ablate,
    directional_verdict,
    preset_rows,
    seed_means,
    signed_deltas,
)


def report(overall, mean, count=4):
    return MetricReport(split="all", count=count, overall_iou=overall, mean_iou=mean,
                        pre_at={0.5: mean, 0.9: 0.0}, total_intersection=0, total_union=0)


class TestPresets:
    """Test the named configuration matrices."""

    def test_composition_rows(self):
        """Test the module-composition matrix and its reference."""
        rows, reference = preset_rows("composition")
        assert reference == "holi_star"
        assert [row.label for row in rows][0] == "holi_star"
        assert rows[-1].overrides == {"variant": "parallel_guided", "ffn": True, "ape": True, "fusion": "eq5"}
        assert all(row.overrides["fusion"] == "eq5" for row in rows)

    def test_fusion_rows(self):
        """Test the fusion matrix keeps the full block and varies only the fusion."""
        rows, reference = preset_rows("fusion")
        assert reference == "eq5"
        assert [row.overrides["fusion"] for row in rows] == ["f1", "f2", "f3", "f4", "eq5"]
        assert all(row.overrides["variant"] == "parallel_guided" for row in rows)

    def test_unknown_preset(self):
        """Test an unknown name."""
        with pytest.raises(ConfigurationError):
            preset_rows("scaling")
        assert set(PRESETS) == {"composition", "fusion"}


class TestArithmetic:
    """Test seed means, deltas and the directional verdict."""

    def test_seed_means(self):
        """Test per-split means over seeds; absent splits are dropped."""
        per_seed = {0: {"all": report(0.4, 0.3)}, 1: {"all": report(0.6, 0.5)}}
        means = seed_means(per_seed, ("all", "small_scale"))
        assert set(means) == {"all"}
        assert means["all"]["overall_iou"] == pytest.approx(0.5)
        assert means["all"]["mean_iou"] == pytest.approx(0.4)
        assert means["all"]["pre@0.5"] == pytest.approx(0.4)
        assert means["all"]["pre@0.9"] == 0.0

    def test_signed_deltas(self):
        """Test row minus reference, per split and metric."""
        deltas = signed_deltas({"all": {"overall_iou": 0.3, "mean_iou": 0.5}},
                               {"all": {"overall_iou": 0.4, "mean_iou": 0.5}})
        assert deltas["all"]["overall_iou"] == pytest.approx(-0.1)
        assert deltas["all"]["mean_iou"] == 0.0

    def test_verdict(self):
        """Test the expected orderings of guided parallel, serial and the baseline."""
        ablation = AblationReport(preset="composition", seeds=[0], reference="holi_star", splits=["all", "small_scale"])
        for label, overall, small in (("holi_star", 0.30, 0.10), ("serial", 0.35, 0.2), ("parallel_star", 0.38, 0.2),
                                      ("parallel_guided", 0.40, 0.25)):
            ablation.rows.append(RowResult(label=label, overrides={}, mean={
                "all": {"overall_iou": overall, "mean_iou": overall},
                "small_scale": {"overall_iou": small, "mean_iou": small},
            }))
        assert directional_verdict(ablation) == {
            "parallel_guided_overall_iou_ge_holi_star": True,
            "parallel_guided_small_mean_iou_gt_holi_star": True,
            "serial_overall_iou_le_parallel_star": True,
        }

    def test_serial_compared_with_unguided_parallel(self):
        """Test serial above parallel_star fails even when guided parallel is higher still."""
        ablation = AblationReport(preset="composition", seeds=[0], reference="holi_star", splits=["all"])
        for label, overall in (("holi_star", 0.5), ("serial", 0.7), ("parallel_star", 0.6), ("parallel_guided", 0.8)):
            ablation.rows.append(RowResult(label=label, overrides={}, mean={
                "all": {"overall_iou": overall, "mean_iou": overall},
            }))
        assert directional_verdict(ablation) == {
            "parallel_guided_overall_iou_ge_holi_star": True,
            "serial_overall_iou_le_parallel_star": False,
        }

    def test_serial_check_needs_parallel_star(self):
        """Test no serial check is made without the unguided parallel row."""
        ablation = AblationReport(preset="custom", seeds=[0], reference="serial", splits=["all"])
        for label, overall in (("serial", 0.7), ("parallel_guided", 0.6)):
            ablation.rows.append(RowResult(label=label, overrides={}, mean={
                "all": {"overall_iou": overall, "mean_iou": overall},
            }))
        assert directional_verdict(ablation) == {}


class TestValidation:
    """Test the matrix is checked before any training."""

    @pytest.mark.parametrize("rows, seeds, reference", [
        ([AblationRow("a")], [0], None),
        ([AblationRow("a"), AblationRow("b")], [], None),
        ([AblationRow("a"), AblationRow("a")], [0], None),
        ([AblationRow("a"), AblationRow("b")], [0], "c"),
        ([AblationRow("a"), AblationRow("b", {"variant": "triple"})], [0], None),
    ])
    def test_rejected(self, tiny_config, tiny_samples, rows, seeds, reference):
        """Test too few rows, no seeds, duplicates, unknown references and invalid overrides."""
        with pytest.raises(ConfigurationError):
            ablate(tiny_config, rows, seeds, tiny_samples, tiny_samples, reference=reference)
