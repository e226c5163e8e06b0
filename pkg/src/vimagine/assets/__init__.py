"""Bundled data files (the smoke scorer model)."""
