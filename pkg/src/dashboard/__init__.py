# Sweep result tables and heatmaps
