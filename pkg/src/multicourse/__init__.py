"""Desk-scale generator-discriminator pretraining with corruption courses,
confusion-notebook self-correction, and checkpoint soups."""

__version__ = "0.1.0"
