from pathlib import Path

import numpy as np
import pytest

from src.core.device import DevicePhysics
from src.core.network import NetworkInstance, NetworkTopology
from src.core.neurons import NeuronParams
from src.training.trainer import TrainedWeights
from src.utils.mnist import MNIST_FILES, write_idx


@pytest.fixture
def phys():
    return DevicePhysics()


@pytest.fixture
def flat_phys():
    """State-independent slope and a floor far below every cell current."""
    return DevicePhysics(beta_state_coeff=0.0, i_floor=1e-20)


@pytest.fixture
def tiny_topology():
    return NetworkTopology(n_inputs=4, n_hidden=3, n_outputs=2, bias_nodes=True)


def make_net(topology, phys, output_r_f=128e3):
    return NetworkInstance.erased(
        topology,
        phys,
        NeuronParams(),
        NeuronParams(r_f=output_r_f),
        array1_biases={"v_source": 1.65},
        array2_biases={"v_source": 1.1},
    )


@pytest.fixture
def tiny_net(tiny_topology, phys):
    return make_net(tiny_topology, phys)


def random_weights(topology, seed=0):
    rng = np.random.default_rng(seed)
    bias = int(topology.bias_nodes)
    w1 = rng.normal(0.0, 1.0, (topology.n_inputs + bias, topology.n_hidden))
    w2 = rng.normal(0.0, 1.0, (topology.n_hidden + bias, topology.n_outputs))
    return TrainedWeights(w1=w1, w2=w2)


@pytest.fixture
def tiny_weights(tiny_topology):
    return random_weights(tiny_topology)


def synthetic_digits(n, seed, side=28):
    """Each class lights its own block of rows, plus a little salt noise."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 10
    images = np.zeros((n, side, side), dtype=np.uint8)
    band = side // 10
    for i, label in enumerate(labels):
        images[i, label * band:(label + 1) * band, 4:24] = 220
    salt = rng.random(images.shape) < 0.01
    images[salt] = 180
    return images, labels.astype(np.uint8)


@pytest.fixture
def mnist_dir(tmp_path) -> Path:
    """Synthetic IDX files with the MNIST names: 200 training and 60 test patterns."""
    directory = tmp_path / "mnist"
    for split, count, seed in (("train", 200, 1), ("test", 60, 2)):
        images, labels = synthetic_digits(count, seed)
        image_name, label_name = MNIST_FILES[split]
        write_idx(directory / image_name, images)
        write_idx(directory / f"{label_name}.gz", labels, compress=True)
    return directory


@pytest.fixture
def config_file(tmp_path, mnist_dir) -> Path:
    """Small experiment: 784-16-10 trained for a few epochs on the synthetic digits."""
    path = tmp_path / "experiment.ini"
    path.write_text(
        "[topology]\n"
        "n_hidden = 16\n"
        "[array2]\n"
        "v_source = 1.1\n"
        "[neurons.output]\n"
        "r_f = 128e3\n"
        "[train]\n"
        "epochs = 3\n"
        "batch_size = 20\n"
        "[import]\n"
        "probe_patterns = 20\n"
        "[data]\n"
        f"mnist_dir = {mnist_dir}\n"
        "[perf]\n"
        "histogram_bins = 10\n"
    )
    return path
