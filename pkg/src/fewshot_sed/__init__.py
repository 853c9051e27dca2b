"""Few-shot bioacoustic sound event detection toolkit.

Given an audio recording and its first five annotated target events, detect
every later occurrence of the same sound; score detections with an
event-based, IoU-matched F-score; and profile datasets (density, SNR, event
lengths, stereotypy). A seeded synthetic-scene generator provides ground
truth for end-to-end checks without any external corpus.
"""

__version__ = "0.1.0"

from .annotations import (AnnotationTable, Event, FewShotTask, build_task,
                          parse_annotation_csv, serialize_annotation_csv,
                          validate_table)
from .detection import (DetectionResult, PredictedEvent, parse_prediction_csv,
                        write_prediction_csv)
from .dsp import (FeatureConfig, PcenParams, Spectrogram, Waveform, apply_mel,
                  compress_features, load_wav, mel_filterbank, proto_features,
                  stft)
from .evaluator import (MatchCounts, bootstrap_ci, candidate_edges,
                        dataset_fscore, fscore, iou, max_bipartite_matching,
                        overall_harmonic_mean, score_file)
from .proto_detector import (Embedder, EmbeddingSequence, ProtoConfig,
                             Prototype, classify_queries, compute_prototype,
                             duration_filter, embed_frames, ensemble_detect,
                             read_embedding_file, sample_negative_regions,
                             write_embedding_file)
from .stats import (SimilarityConfig, density, event_length_stats,
                    event_similarity, snr_estimate, spectral_profile,
                    stereotypy_score)
from .synth import EventParams, SceneSpec, generate_scene, write_scene
from .template_detector import (CorrelationTrace, Template, TemplateConfig,
                                detect_template, extract_template, ncc_sweep,
                                peak_pick, shot_threshold)

__all__ = [name for name in dir() if not name.startswith("_")]
