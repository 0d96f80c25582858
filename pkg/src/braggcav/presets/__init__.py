"""JSON run configurations reproducing the figures, one experiment per file."""
