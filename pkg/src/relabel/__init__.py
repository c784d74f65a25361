"""Find noisy labels by model disagreement, re-label them with human review,
and version every dataset revision — for classification, sequence tagging,
object detection, sequence generation and CTR tasks."""

__version__ = "0.1.0"
