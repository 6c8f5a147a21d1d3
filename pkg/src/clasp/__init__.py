"""Closed-loop tabletop grasping: perception, reasoning, execution, judging.

The subpackages are plain modules; import what you need, e.g.::

    from clasp.scene import sample_scene, SceneGenConfig
    from clasp.orchestrator import run_episode, PipelineConfig
"""
__version__ = "0.1.0"
