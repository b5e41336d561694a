# Error Filtration QKD Simulator Package
