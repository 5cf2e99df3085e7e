"""Graph-augmented factuality checking for summaries.

Modules: :mod:`amr` (Penman graphs), :mod:`canon` (bipartite and token graphs,
subword vocabulary), :mod:`smatch`, :mod:`autodiff` (reverse-mode engine),
:mod:`encoders`, :mod:`models`, :mod:`synthetic`, :mod:`data`,
:mod:`metrics`, :mod:`train` and :mod:`cli`.
"""

__version__ = "0.1.0"
