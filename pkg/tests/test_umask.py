"""Umask relevance inference tests.

The gate under reconstruction: a selector counts iff the relevance mask is
zero or shares a bit with the umask.  Inference sees only counted/quiet
points and must recover the mask that generated them.
"""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmu_prospector.collector import ScanReport
from pmu_prospector.events import EventSelector, umask_gates
from pmu_prospector.umask import (
    RelevanceMask,
    RelevanceObservation,
    emit_distribution,
    group_hidden_by_event_code,
    infer_relevance_mask,
    infer_report_masks,
    relevance_observations,
    write_distribution_csv,
    write_masks_csv,
)


def full_pattern(event_code: int, mask: int) -> list[RelevanceObservation]:
    """Observations for all 256 umasks generated by the gate itself."""
    return [
        RelevanceObservation(event_code, umask, umask_gates(umask, mask))
        for umask in range(256)
    ]


class TestInference:
    def test_every_mask_recovered_from_its_full_pattern(self):
        for mask in range(256):
            result = infer_relevance_mask(full_pattern(0x42, mask))
            assert result == RelevanceMask(0x42, mask, consistent=True)

    def test_odd_umask_pattern_means_bit_zero(self):
        result = infer_relevance_mask(
            RelevanceObservation(0x6C, u, bool(u & 0x01)) for u in range(256)
        )
        assert result == RelevanceMask(0x6C, 0x01, consistent=True)

    def test_counting_everywhere_means_mask_zero(self):
        result = infer_relevance_mask(full_pattern(0x5E, 0x00))
        assert result == RelevanceMask(0x5E, 0x00, consistent=True)

    def test_partial_observations_pick_maximal_consistent_mask(self):
        # one counted point constrains almost nothing, so all bits stay in
        result = infer_relevance_mask([RelevanceObservation(0x10, 0x03, True)])
        assert result == RelevanceMask(0x10, 0xFF, consistent=True)

    def test_quiet_points_forbid_their_bits(self):
        observations = [
            RelevanceObservation(0x10, 0x01, True),
            RelevanceObservation(0x10, 0x0C, False),
        ]
        result = infer_relevance_mask(observations)
        assert result == RelevanceMask(0x10, 0xF3, consistent=True)

    def test_contradiction_falls_back_to_single_bit(self):
        # quiet 0x03 forbids bits 0 and 1, yet 0x01 counted: nothing fits
        observations = [
            RelevanceObservation(0x10, 0x03, False),
            RelevanceObservation(0x10, 0x01, True),
        ]
        result = infer_relevance_mask(observations)
        assert result == RelevanceMask(0x10, 0x01, consistent=False)

    def test_spurious_count_in_odd_pattern_degrades_gracefully(self):
        # an over-count at umask 2 breaks exact inference; the best single
        # bit is still the true one
        observations = [
            RelevanceObservation(0x6C, u, bool(u & 0x01) or u == 2) for u in range(256)
        ]
        result = infer_relevance_mask(observations)
        assert result == RelevanceMask(0x6C, 0x01, consistent=False)

    def test_duplicate_observations_merge_by_or(self):
        noisy = [
            RelevanceObservation(0x10, 0x05, False),
            RelevanceObservation(0x10, 0x05, True),
        ]
        assert infer_relevance_mask(noisy) == infer_relevance_mask(reversed(noisy))
        assert infer_relevance_mask(noisy) == infer_relevance_mask(
            [RelevanceObservation(0x10, 0x05, True)]
        )

    def test_mixed_event_codes_rejected(self):
        observations = [
            RelevanceObservation(0x10, 0x01, True),
            RelevanceObservation(0x20, 0x01, True),
        ]
        with pytest.raises(ValueError, match="mixed event codes"):
            infer_relevance_mask(observations)

    def test_empty_observations_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            infer_relevance_mask([])

    @settings(max_examples=200, deadline=None)
    @given(
        mask=st.integers(0, 255),
        umasks=st.sets(st.integers(0, 255), min_size=1, max_size=40),
    )
    def test_inferred_mask_explains_any_gate_generated_subset(self, mask, umasks):
        observations = [
            RelevanceObservation(0x33, u, umask_gates(u, mask)) for u in umasks
        ]
        result = infer_relevance_mask(observations)
        assert result.consistent
        for obs in observations:
            assert umask_gates(obs.umask, result.mask) == obs.counted


def synthetic_report() -> ScanReport:
    hidden: dict[EventSelector, set[int]] = {}
    for umask in range(256):
        if umask & 0x01:
            hidden[EventSelector(0x6C, umask)] = {1}
        if umask & 0x10:
            hidden[EventSelector(0x08, umask)] = {5}
        hidden[EventSelector(0x5E, umask)] = {3, 6}
    return ScanReport(
        microarchitecture_label="sim",
        total_instructions=10,
        executed_success=8,
        hidden_events=hidden,
    )


class TestReportAnalysis:
    def test_observations_reconstruct_quiet_points(self):
        observations = relevance_observations(synthetic_report(), 0x6C)
        assert len(observations) == 256
        assert all(obs.event_code == 0x6C for obs in observations)
        assert {obs.umask: obs.counted for obs in observations} == {
            u: bool(u & 0x01) for u in range(256)
        }

    def test_masks_inferred_per_event_code(self):
        masks = infer_report_masks(synthetic_report())
        assert masks == {
            0x08: RelevanceMask(0x08, 0x10, consistent=True),
            0x5E: RelevanceMask(0x5E, 0x00, consistent=True),
            0x6C: RelevanceMask(0x6C, 0x01, consistent=True),
        }

    def test_grouping_sorts_both_dimensions(self):
        grouped = group_hidden_by_event_code(synthetic_report())
        assert list(grouped) == [0x08, 0x5E, 0x6C]
        assert grouped[0x08] == [u for u in range(256) if u & 0x10]
        assert grouped[0x6C] == [u for u in range(256) if u & 0x01]
        assert grouped[0x5E] == list(range(256))

    def test_distribution_points_sorted(self):
        points = emit_distribution(synthetic_report())
        assert points == sorted(points)
        assert len(points) == 128 + 128 + 256
        assert points[0] == (0x08, 0x10)

    def test_distribution_csv(self, tmp_path):
        path = str(tmp_path / "distribution.csv")
        write_distribution_csv(synthetic_report(), path)
        lines = open(path, encoding="utf-8").read().splitlines()
        assert lines[0] == "event_code,umask"
        assert lines[1] == "0x08,0x10"
        assert len(lines) == 1 + 512

    def test_masks_csv(self, tmp_path):
        path = str(tmp_path / "masks.csv")
        masks = {
            0x6C: RelevanceMask(0x6C, 0x01, consistent=True),
            0x10: RelevanceMask(0x10, 0x04, consistent=False),
        }
        write_masks_csv(masks, path)
        lines = open(path, encoding="utf-8").read().splitlines()
        assert lines == [
            "event_code,relevance_mask,consistent",
            "0x10,0x04,false",
            "0x6C,0x01,true",
        ]
