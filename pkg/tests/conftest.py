# Keeps the tests directory importable (for the shared oracles module).
