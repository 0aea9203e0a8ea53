"""Simulated TrustZone PLC (TEE-PLC) toolkit."""

__version__ = "0.1.0"
