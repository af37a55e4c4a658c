"""Statistical shape model evaluation, landmark inference and lesion screening on point correspondences."""

__version__ = "0.1.0"
