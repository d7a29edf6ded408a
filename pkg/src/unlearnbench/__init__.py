"""Teacher-student machine unlearning (SCRUB) with baselines and an evaluation harness."""

__version__ = "0.1.0"
