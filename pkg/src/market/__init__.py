# Auction simulator and datasets
