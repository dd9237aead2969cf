"""Adversarial sample crafting for small feedforward networks.

Train a classifier, compute its exact input-output Jacobian by forward
accumulation, rank features with adversarial saliency maps, and run
greedy crafting campaigns with hardness / distance / robustness metrics.
"""

from .craft import (
    CraftParams,
    CraftResult,
    craft,
    craft_from_empty,
    craft_general,
    max_iterations,
    run_campaign,
)
from .jacobian import Jacobian, finite_difference_jacobian, forward_derivative, layer_pushforward
from .metrics import (
    adversarial_distance,
    campaign_stats,
    distance_matrix,
    hardness,
    hardness_campaign,
    regularity_score,
    robustness,
)
from .network import (
    Activation,
    AvgPool,
    Conv2D,
    Dense,
    Flatten,
    MaxPool,
    Network,
    Softmax,
    cnn_architecture,
    load_model,
    mlp_architecture,
    save_model,
    toy_and_architecture,
)
from .saliency import (
    PairSelection,
    SaliencyMap,
    pairwise_saliency,
    saliency_decrease,
    saliency_increase,
)
from .train import (
    LabeledDataset,
    TrainConfig,
    accuracy,
    and_dataset,
    augment_retrain,
    backprop_gradients,
    init_params,
    sgd_train,
)

__version__ = "0.1.0"
