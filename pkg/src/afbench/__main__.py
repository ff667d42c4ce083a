"""``python -m afbench``."""

from .cli import main

main()
