"""Desk-scale workbench for skeleton-induced video-language models.

Subpackages follow the pipeline: synthetic data generation (`synthdata`,
`dataio`), modality encoders over a small autodiff core (`autodiff`,
`encoders`), objectives (`losses`), training procedures (`training`),
zero-shot evaluation and diagnostics (`zseval`), the toy LVLM projector
pipeline (`lvlm`), and the experiment CLI (`cli`).
"""

__version__ = "0.1.0"
