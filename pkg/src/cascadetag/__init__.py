"""Multi-task BiLSTM-CRF slot-filling toolkit with cascade and residual connections."""

__version__ = "0.1.0"
