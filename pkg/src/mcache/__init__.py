"""Transactional method caching: history theory, OCTP scheduler, and simulator."""

__version__ = "0.1.0"
