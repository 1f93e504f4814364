from .domains import DomainLookup, MBFCRating
from .engine import (
    FeatureMatrix,
    PostTable,
    ToxicityScores,
    UserFilter,
    action_features,
    build_matrix,
    select_users,
    text_features,
    toxicity_features,
    url_features,
)
from .manifest import GROUPS, FeatureManifest, FeatureSpec, ManifestError, default_manifest
from .text import normalized_entropy, post_metrics, registrable_domain
from .toxicity import LexiconScorer, MissingToxicityError, ToxicityScorer

__all__ = [
    "DomainLookup",
    "FeatureManifest",
    "FeatureMatrix",
    "FeatureSpec",
    "GROUPS",
    "LexiconScorer",
    "MBFCRating",
    "ManifestError",
    "MissingToxicityError",
    "PostTable",
    "ToxicityScorer",
    "ToxicityScores",
    "UserFilter",
    "action_features",
    "build_matrix",
    "default_manifest",
    "normalized_entropy",
    "post_metrics",
    "registrable_domain",
    "select_users",
    "text_features",
    "toxicity_features",
    "url_features",
]
