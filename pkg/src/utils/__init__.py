"""Dataset, artifact, report, cache and history helpers."""
