"""Hybrid-cloud placement simulator for crowdsourced live streaming."""

__version__ = "0.1.0"
