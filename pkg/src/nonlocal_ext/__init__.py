"""Whitney-cube extension operators from the complement of an open set, and
numerical estimates of the nonlocal trace seminorms they are bounded by."""

__version__ = "0.1.0"
