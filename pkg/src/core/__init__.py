"""Device, array, neuron and network models plus the experiment service."""
