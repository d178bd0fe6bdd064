"""Sparse GLM fitting that borrows strength from several weighted prior sources."""
