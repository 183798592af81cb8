# -*- coding: utf-8 -*-

"""Top-level package for graspdict."""

__author__ = """Konrad Förstner"""
__email__ = 'konrad@foerstner.org'
__version__ = '0.1.0'

# Number of hand joints and box corners in every pose.
NUM_HAND_JOINTS = 21
NUM_BOX_CORNERS = 8
NUM_KEYPOINTS = NUM_HAND_JOINTS + NUM_BOX_CORNERS


class GraspDictError(Exception):
    """Base class of all errors raised by graspdict."""


class InputError(GraspDictError):
    """Bad user input: malformed files, configs or data. CLI exit code 1."""


class RuntimeFailure(GraspDictError):
    """A pipeline stage failed while running. CLI exit code 2."""
