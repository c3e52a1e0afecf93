#!/usr/bin/env python3
"""Box geometry and benchmark metrics, end to end on a toy sample set."""

from intentground import BBox, ScoredSample, aggregate_overall, best_match, build_report, iou


def main():
    gt = BBox(10, 10, 50, 50)
    pred = BBox(20, 10, 60, 50)  # shifted right by a quarter of its width
    print(f"IoU(pred, gt) = {iou(pred, gt):.4f}")

    alternatives = [gt, BBox(60, 60, 90, 90)]
    score, index = best_match(BBox(61, 61, 89, 89), alternatives)
    print(f"best_match against {len(alternatives)} ground truths -> iou {score:.3f} (gt #{index})")

    context = build_report(
        [ScoredSample(f"ctx-{i}", v, 0) for i, v in enumerate([0.9, 0.55, 0.45, 0.2])]
    )
    uncommon = build_report(
        [ScoredSample(f"unc-{i}", v, 0) for i, v in enumerate([0.6, 0.35, 0.1, 0.0])]
    )
    overall = aggregate_overall(context, uncommon)
    print(f"context  P@0.5 = {context.precision_at[0.5]:.2f}, mIoU = {context.miou:.4f}")
    print(f"uncommon P@0.5 = {uncommon.precision_at[0.5]:.2f}, mIoU = {uncommon.miou:.4f}")
    print(f"overall  P@0.5 = {overall.precision_at[0.5]:.2f} (unweighted mean of the two)")


if __name__ == "__main__":
    main()
