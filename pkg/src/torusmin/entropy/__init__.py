"""Bowen entropy machinery, the spanning set P_r and mu-tubes."""
