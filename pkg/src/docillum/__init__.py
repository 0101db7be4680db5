"""Light-guided unpaired document illumination correction."""
from .imaging import (
    SynthSpec,
    apply_illumination,
    denormalize,
    normalize,
    random_crop,
    read_png,
    synth_clean_document,
    write_png,
)
from .lightstore import LightContainer
from .lpnet import LPNet, lpnet_forward, lpnet_loss, train_lpnet
from .metrics import cer, edit_distance, ms_ssim, resize_to_area
from .translation import Discriminator, GeneratorA, GeneratorN

__version__ = "0.1.0"
