# Keeps the repository root importable for the flat module layout.
