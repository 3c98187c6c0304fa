"""Rate-distortion learned transforms for intra-prediction residual blocks.

The package trains an orthonormal block transform jointly with a Gaussian
entropy model and a lambda -> quantization-step map, then measures it with a
real adaptive range coder against DCT-II, KLT and sparse orthonormal
baselines, including per-block multi-transform selection.

Top-level attributes resolve lazily so the command line layer can configure
threading environment variables before numpy loads.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "baselines",
    "cli",
    "codec_eval",
    "dataset",
    "entropy_model",
    "intra",
    "plots",
    "rangecoder",
    "synth",
    "trainer",
    "transforms",
)

_TRANSFORM_NAMES = (
    "TransformMatrix",
    "dct2_matrix",
    "dct2_transform",
    "dct8_matrix",
    "dense_transform",
    "dst7_matrix",
    "forward",
    "inverse",
    "load_transform",
    "orthonormality_defect",
    "orthonormalize",
    "save_transform",
    "separable_transform",
    "to_dense",
    "transform_defect",
)

__all__ = ["__version__", *_SUBMODULES, *_TRANSFORM_NAMES]


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    if name in _TRANSFORM_NAMES:
        module = importlib.import_module(".transforms", __name__)
        return getattr(module, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)
