"""Package initializer for ai."""

__all__: list[str] = []
