# Binary dataset and checkpoint files.
