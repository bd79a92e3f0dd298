"""Shape and topology optimization with Laguerre diagrams.

Modules, bottom up: ``predicates`` and ``triangulation`` (regular triangulation),
``geometry`` (classical and ball-clipped Laguerre cells), ``sdot`` (weights for
prescribed cell measures), ``diagram_ops`` (Lloyd, resampling, islands), ``vem``
(polygonal finite elements), ``functionals`` and ``sensitivity`` (objectives and
their design gradients), ``optimize`` (constrained descent) and ``cli``.
"""

__version__ = "0.1.0"
