"""Binary classifiers that map pair features to ancestral-relation scores."""

from ancestral_learning.classify.logistic import (  # noqa: F401
    CvPoint,
    L1Config,
    L1LogisticModel,
    fit_l1_logistic,
    l1_gradient,
    l1_objective,
    lambda_max,
    lambda_path,
    solve_l1_logistic,
)
from ancestral_learning.classify.mlp import (  # noqa: F401
    MlpConfig,
    MlpModel,
    fit_mlp,
    init_mlp,
    mlp_loss_and_gradients,
)
from ancestral_learning.classify.models import (  # noqa: F401
    LEARNERS,
    Model,
    StoredModel,
    fit,
    load_model,
    predict,
    save_model,
)
from ancestral_learning.classify.training import TrainingSet  # noqa: F401
