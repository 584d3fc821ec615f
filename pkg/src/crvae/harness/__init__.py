"""Data, configuration, checkpoints, logging and the command line."""
