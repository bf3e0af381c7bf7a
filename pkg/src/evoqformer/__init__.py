"""Continually-extensible multimodal Q-Former for survival prediction."""

from ._kernels import BACKEND
from .baselines import FUSION_KINDS, baseline_fuse, build_fusion
from .checkpoint import load_checkpoint, save_checkpoint
from .continual import StagePlan, add_modality, non_interference_check, run_continual, train_stage
from .data import CohortManifest, dataset_io, generate_cohort, load_cohort, save_cohort
from .errors import ConfigInvalid, DataError, EvoError, NumericalFailure
from .lora import AdapterRegistry, LoraAdapter, attach_adapter, effective_projection, route_forward
from .model import Adam, ModelConfig, MultimodalSurvivalModel, fit
from .patches import Patch, entropy_filter, patch_entropy
from .qformer import QFormerConfig, init_qformer, qformer_forward
from .smqf import FusionConfig, SMQFusion, fuse_queries, project_supporting, self_gate
from .survival import aggregate_mean, concordance_index, cox_loss, cox_partial_likelihood
from .tensor import Graph, Tensor, backward, forward_op, grad_check, no_grad

__version__ = "0.1.0"
