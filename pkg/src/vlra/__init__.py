"""Very-low-rank fine-tuning adapters at desk scale.

A numpy library implementing a family of parameter-efficient fine-tuning
methods over frozen linear layers, with exact parameter and FLOP accounting,
closed-form gradients, weight merging, least-squares oracles, and a
deterministic benchmark harness.
"""

from .adapters import (AdapterKind, AdapterState, GradBundle, KINDS, METHOD_NAMES,
                       backward, backward_batch, flop_count, forward, forward_batch,
                       kind_from_name, make_adapter, merge, mora_rank, param_count,
                       perturb_trainables)
from .analysis import (AlignmentReport, bitfit_floor_oracle, fd_gradcheck,
                       gradcheck_suite, ones_ls_oracle, pca_alignment,
                       write_alignment_csv)
from .errors import DegenerateInputError, DomainError, ShapeError, StaleTapeError
from .linalg import (Rng, STREAM_ADAPTER, STREAM_ALIGNMENT, STREAM_BASE,
                     STREAM_COMPRESSION, STREAM_DATA, STREAM_VERA, matvec,
                     seeded_uniform, svd)
from .model import (AdaptedLinear, FrozenLinear, LayerNorm, ToyNet, attach,
                    make_frozen_linear, make_mlp, make_single, net_backward,
                    net_forward)
from .train import (RunResult, TaskSpec, TrainConfig, adamw_init, adamw_step,
                    fit, gen_task, method_name, sgd_step, time_adapter_steps,
                    train_run)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
