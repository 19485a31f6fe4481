# Porovem test suite
