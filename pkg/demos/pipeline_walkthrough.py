"""End-to-end run in memory: generate, detect, classify, score.

Run with ``python3 demos/pipeline_walkthrough.py``; takes about a minute.
"""

import numpy as np

from wideband_amc import pipeline
from wideband_amc.detect import DetectorConfig
from wideband_amc.evaluation import MatchConfig, map_report
from wideband_amc.synth import GenConfig, generate_dataset


def main():
    train = list(generate_dataset(GenConfig(entry_count=300, master_seed=11)))
    test = list(generate_dataset(GenConfig(entry_count=100, master_seed=12)))
    model = pipeline.train(train, "centroid")
    match = MatchConfig.for_capture(test[0].fs, test[0].iq.size)
    truths = pipeline.truths_of(test)

    for name, proposals in [("ground truth", pipeline.truth_proposals(test)),
                            ("energy", pipeline.detect_dataset(test, DetectorConfig())),
                            ("matched filter", pipeline.detect_dataset(test, DetectorConfig(method="mf")))]:
        det = map_report(proposals, truths, match)
        joint = map_report(pipeline.classify_proposals(test, proposals, model), truths, match, mode="joint")
        print(f"{name:>15}: {len(proposals):4d} proposals  AP@.50={det['ap50']:.3f}  "
              f"AR@6={det['ar6']:.3f}  accuracy={joint['accuracy']:.3f}")

    counts = np.bincount([len(e.truths) for e in test], minlength=7)
    print("signals per entry:", dict(enumerate(counts.tolist())))


if __name__ == "__main__":
    main()
