"""conesym: noncommutative symbols and numerical index theory on a cone
over the circle.

Subpackages follow the pipeline: operators on the link circle (``link``),
the symbol algebra on the cone (``symbols``), Mellin/boundary analysis
(``indicial``), the symbol map and quantization between b-operators and
symbols (``quantize``), Fredholm index machinery (``fredholm``), the
constructive K-theory content (``ktheory``), model problem builders
(``models``) and the command line driver (``cli``).
"""

from .link import (LinkSpace, LinkOperator, ParamOperator, TailSymbol,
                   make_link_operator, param_elliptic, functional_calculus)

__all__ = [
    "LinkSpace", "LinkOperator", "ParamOperator", "TailSymbol",
    "make_link_operator", "param_elliptic", "functional_calculus",
]

__version__ = "0.1.0"
