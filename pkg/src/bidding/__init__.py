# Bid policies and dual fitting
