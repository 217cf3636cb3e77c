# Uncertainty sets
