"""FAVOR+ attention and softmax-kernel random features."""
