from .types import DISConfig, ExemplarBox, FeaturePyramid, Sample
from .scaling import dynamic_scale, resize_image, resize_sample
from .roi import roi_align, roi_align_many, roi_weights
from .backbone import BackboneConfig, ToyBackbone, pyramid_shapes
from .synth import (
    TRAIN_CATEGORIES,
    VAL_CATEGORIES,
    SynthConfig,
    category,
    split_configs,
    synth_dataset,
    synth_sample,
)
from .files import (
    export_density_pgm,
    read_dataset,
    read_pnm,
    read_pyramid,
    read_sample,
    write_dataset,
    write_pnm,
    write_pyramid,
    write_sample,
)
