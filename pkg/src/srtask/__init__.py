"""srtask: deciding whether a vision task can evaluate and train SR models.

Runs a task on the LR / bicubic-upsampled / HR branches of each scene,
scores the LR and bicubic outputs against the HR-derived self-supervised
target, aggregates per-task suitability verdicts, and trains a small SR
network with a composite task-driven loss.
"""

from .adapt import (AdaptMode, NormStats, adapt_model, compute_activation_stats,
                    invert_intensity, recalibrate, rescale_training_corpus)
from .errors import (ContractViolationError, DataError, InvocationError, SrtaskError,
                     TrainingDivergedError)
from .evaluate import (Branch, BranchResult, SceneVerdict, VerdictStore,
                       aggregate_suitability, evaluate_scene, run_three_branch)
from .metrics import (AgreementScore, agreement_keypoints, agreement_mask,
                      agreement_partition)
from .resample import (bicubic_resize, bicubic_weights, degrade_simulate,
                       downscale_to_gsd, resize_mask)
from .scene_store import (DatasetManifest, Raster, Scene, compose_rgb, load_manifest,
                          load_raster, load_scene, normalize_radiometry, save_raster,
                          save_scene)
from .synth import SynthSpec, generate_corpus, generate_scene
from .train_sr import (LossWeights, SRModel, composite_loss, sr_infer,
                       train_task_driven)

__version__ = "0.1.0"
