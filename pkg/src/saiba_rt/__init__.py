"""Real-time multimodal behavior realization: intentions (FML) to behavior
plans (BML) to 25 Hz keyframe frames, with incremental dispatch, live
interruption control, frame-level merging over OSC, turn-taking and touch
gating."""

__version__ = "0.1.0"
