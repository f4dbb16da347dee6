"""Structured-sparsity training, pruning, and benchmarking for Siamese
speaker-embedding networks.

Submodules:
    features   WAV loading, VAD, log-spectrogram feature cubes (FCUB files)
    tensor_ops dense numerics with hand-derived backward passes
    net        the fixed conv/fc embedding tower and SSVW checkpoints
    losses     contrastive pair loss plus L2 and group-lasso regularizers
    train      seeded SGD-with-momentum loop and mask-respecting fine-tune
    prune      group-norm thresholding, structural compaction, benchmarks
    metrics    trial sampling, EER, DET curves
    synth      deterministic synthetic speaker audio
    cli        the `slimsiam` command-line pipeline
"""

__version__ = "0.1.0"
