"""Location-fraud detection for indoor mobile crowdsensing."""

from .coarse import CoarseFlags, run_coarse, speed_check, ssid_check
from .datamodel import DetectionConfig, FeatureMatrix, Fingerprint, Record, TagTopology, dist, featurize
from .emulator import EmulatorConfig, export_location_stats, generate
from .errors import TagSentryError
from .ingest import Dataset, GroundTruth, load_dataset, load_ground_truth
from .metrics import confusion, topk_recall
from .misplacement import SuspectRanking, rank_misplaced
from .removal import rank_removed
from .truthdiscovery import TruthModel, ValidityLabels, classify, fit

__version__ = "0.1.0"
