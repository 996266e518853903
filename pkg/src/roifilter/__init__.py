"""Human-guided detection filtering for VQA pipelines, with subjective scoring."""

from .detection import ClassVocabulary, DetectionSet, PipelineDims, derive_normalized_boxes, validate_detection_set
from .feature_filter import FilterConfig, FilterTrace, apply_filter, driving_whitelist
from .ingestion import load_detection_dump, majority_vote, save_detection_dump
from .overlap import CorrectnessGrade, compare_features, grade_answer, jaccard
from .pipeline import AnswerDistribution, MockBackend, PipelineResult, Variant, argmax_answer, run_pipeline
from .scoring import cosine_similarity, evaluate_run, mae, pearson, rmse

__version__ = "0.1.0"
