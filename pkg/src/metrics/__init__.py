# Performance metrics
