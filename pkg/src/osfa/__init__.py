"""One-shot face detection with learnable Gaussian feature-space
augmentation, built from scratch on numpy.

Layer map:

* ``tensor``     -- dense arrays, reverse-mode autodiff, seeded rng streams
* ``checkpoint`` -- the "OSFA1" named-tensor container
* ``augment``    -- learnable feature noise + image-space baselines
* ``boxes``      -- IoU, NMS, box-delta coding
* ``detector``   -- backbone, matching, proposals, RoI pooling, relation head
* ``synth``      -- procedural long-tail page generator
* ``data``       -- episodes, query pools, dataset disk IO
* ``manga109``   -- strict annotation-XML ingestion
* ``engine``     -- training loop, optimizer, experiment matrix
* ``evaluate``   -- AP50, appearance-thresholded means, report tables
* ``gradcheck``  -- finite-difference verification suites
* ``cli``        -- the ``osfa`` command
"""

from .augment import SigmaParams, augment_query, sample_noise, sigma_step
from .engine import Seeds, TrainConfig, train
from .metrics import ap50, evaluate, iou, report, thresholded_map
from .synth import GenConfig, generate_dataset
from .tensor import Rng, Tensor, backward

__all__ = [
    "GenConfig",
    "Rng",
    "Seeds",
    "SigmaParams",
    "Tensor",
    "TrainConfig",
    "ap50",
    "augment_query",
    "backward",
    "evaluate",
    "generate_dataset",
    "iou",
    "report",
    "sample_noise",
    "sigma_step",
    "thresholded_map",
    "train",
]

__version__ = "0.1.0"
