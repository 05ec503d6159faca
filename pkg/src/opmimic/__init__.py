"""Desk-scale human-robot interaction sandbox.

A kinematic arena with a scripted expert-operator oracle generates
interaction data; a conditional diffusion transformer learns to map human
pose history to continuous gamepad commands plus discrete behavior/mode
events; a receding-horizon controller, evaluation harness, and streaming
service close the loop.
"""

__version__ = "0.1.0"
