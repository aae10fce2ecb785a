"""Accountable JavaScript delivery toolkit."""
