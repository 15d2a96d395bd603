# Gradient estimators package
