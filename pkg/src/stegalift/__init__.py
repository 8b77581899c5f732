"""Steganographic-domain feature lifting and forgery detection library.

Submodules are imported explicitly (``from stegalift import tensor``);
the package root stays import-light so the CLI can configure threading
before any numeric library loads.
"""

__version__ = "0.1.0"
