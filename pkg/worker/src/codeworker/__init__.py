"""Code execution worker.

Reads length-prefixed JSON requests on stdin, runs the contained script
against in-memory images under resource limits, and writes one response
frame per request on stdout. Scripts that parse as verb lists run on the
built-in deterministic kernels; anything else executes as restricted
Python with images exposed as numpy arrays.
"""

__version__ = "0.1.0"
