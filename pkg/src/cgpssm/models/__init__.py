from .boosting import BoostedClassifier, fit_boosted_classifier, train_boosted
from .conditional import ConditionalPoissonFit, fit_conditional_poisson
from .glm import FittedModel, fit_glm
from .spatial_glm import RadialBasis, fit_spatial_glm

__all__ = [
    "BoostedClassifier",
    "ConditionalPoissonFit",
    "FittedModel",
    "RadialBasis",
    "fit_boosted_classifier",
    "fit_conditional_poisson",
    "fit_glm",
    "fit_spatial_glm",
    "train_boosted",
]
