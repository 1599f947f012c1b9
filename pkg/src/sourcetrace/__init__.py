"""Epidemic source inference over contact-tracing networks."""

__version__ = "0.1.0"
