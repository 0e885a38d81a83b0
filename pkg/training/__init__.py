"""Package initializer for training."""

__all__: list[str] = []
