"""Knowledge distillation of learned image codec encoders, on a small numpy autodiff core."""

from .codec import ModelState, encode, forward, init_codec
from .complexity import count_macs_per_pixel, encoder_family, relative_report
from .config import RunConfig, load_config
from .evaluation import RDCurve, RDPoint, bd_metrics, eval_model, psnr
from .training import TrainConfig, distill, make_student, train_frozen_baseline, train_teacher

__version__ = "0.1.0"
