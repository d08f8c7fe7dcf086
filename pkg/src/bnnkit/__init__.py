"""bnnkit: an end-to-end toolkit for fully-binarized neural networks.

Pieces: bit-packed XNOR/popcount kernels (bitcore), learned/fixed
thermometer and base-2 input encoders (encoders), a small dense training
engine with straight-through gradients (nnops/layers/losses/optim/train),
declarative topologies with size/BOPs accounting (topology), gradual block
pruning with a distillation loss (pruning), a ramp-ADC behavioral simulator
(adcsim), dataset tooling (dataio), and a CLI (cli).
"""

__version__ = "0.1.0"
