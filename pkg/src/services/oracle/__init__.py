# Brute-force verification package
