"""Multimodal task-oriented dialogue as sequence prediction.

Scenes are rendered as de-localized catalogue+region tokens, dialogue turns are
serialized into a belief/action/response grammar, and a causal decoder-only
transformer is trained with a scene-masked language-model loss. Includes a
synthetic corpus generator, the four benchmark tasks, their metrics, and an
input-times-gradient salience analyzer.
"""

__version__ = "0.1.0"
