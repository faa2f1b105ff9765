"""
MIRRORFLOW Test Suite
Unit tests and integration tests for the solvers, flow and experiment runner
"""
