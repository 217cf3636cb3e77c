# Reference verifiers
