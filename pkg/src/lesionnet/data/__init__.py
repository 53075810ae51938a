from .folds import FoldAssignment, FoldError, make_folds
from .manifest import DatasetManifest, ImageSample, ManifestError, load_manifest, write_manifest
from .phantom import PhantomConfig, generate_phantom_dataset
from .transforms import augment, preprocess, resize_to_width

__all__ = [
    "DatasetManifest",
    "FoldAssignment",
    "FoldError",
    "ImageSample",
    "ManifestError",
    "PhantomConfig",
    "augment",
    "generate_phantom_dataset",
    "load_manifest",
    "make_folds",
    "preprocess",
    "resize_to_width",
    "write_manifest",
]
