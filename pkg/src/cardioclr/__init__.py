"""cardioclr: contrastive self-supervised pretraining and augmentation
ablation tooling for 1D phonocardiogram classifiers."""

__version__ = "0.1.0"
