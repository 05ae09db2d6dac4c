"""Reference training and weight import for the simulated chip."""
