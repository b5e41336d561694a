# Simulation modules package
