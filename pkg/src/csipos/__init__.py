"""Camera-assisted semi-supervised CSI fingerprint positioning.

A base station with a uniform linear array and a ring of cameras localizes
street vehicles from their channel state information. Image-derived azimuth
detections (which carry no correspondence to the CSI samples) are fused into
angular occupancy labels to pretrain a convolutional encoder on unlabeled
CSI; a small labeled set then fine-tunes the encoder with a position
regression head. The package includes a deterministic scene/channel
simulator at both desk and full scale, a hand-rolled gradient engine with a
compiled kernel core, and a config-driven experiment runner.
"""

__version__ = "0.1.0"
