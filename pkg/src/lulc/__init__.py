"""Land-use / land-cover scene classification with small numpy CNNs.

Modules: ``tensor`` (im2col kernels), ``layers``, ``network`` (build, surgery,
checkpoints), ``trainer`` (SGD), ``svm``, ``augment``, ``dataset``,
``evaluation`` and ``cli``.
"""

__version__ = "0.1.0"
