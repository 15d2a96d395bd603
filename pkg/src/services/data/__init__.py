# Data services package
