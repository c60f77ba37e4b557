"""Relation-based few-shot object detection toolkit.

Core pieces: a small numpy autodiff engine, relation operators, a pyramid
backbone, support-guided proposals, shot aggregation, a relation detection
head, an episodic trainer, COCO-style evaluation, and a CLI + HTTP service.
"""

__version__ = "0.1.0"
