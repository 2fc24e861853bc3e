"""Query-model driven ingestion, buffering, transformation and serving of device data."""

__version__ = "0.1.0"
