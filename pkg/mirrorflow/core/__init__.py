"""
mirrorflow core
Grids, mirror maps, control problems, PDE and SDE solvers, the mirror flow and its certificates
"""
