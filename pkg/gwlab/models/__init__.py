"""Pydantic records shared by services, logs and reports."""
