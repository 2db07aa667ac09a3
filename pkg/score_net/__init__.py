"""Score network, optimizer and checkpoints."""
