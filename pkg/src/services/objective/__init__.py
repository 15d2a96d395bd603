# Variational objective package
