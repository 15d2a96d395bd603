# Stochastic network package
