# Robust Autobidding
