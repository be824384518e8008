"""Test-time-training camouflaged object detection toolkit at desk scale.

Modules: ``tensor`` (array primitives), ``ttt`` (TTT-Linear layer),
``rsampc`` (frozen random perturbation stack), ``tvm`` (wavelet + TTT route),
``model`` (toy parallel-then-fuse network), ``metrics``, ``probe``,
``experiment``/``cli`` (harness) and ``report``.
"""
__version__ = "0.1.0"
