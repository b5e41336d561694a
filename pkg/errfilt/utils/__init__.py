# Simulator utilities package
