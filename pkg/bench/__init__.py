"""Package initializer for bench."""

__all__: list[str] = []
