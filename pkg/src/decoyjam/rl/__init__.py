"""Tabular learners: flat Q-learning and successive refinement."""
