"""Solvers for min-max games with dependent strategy sets, and Fisher market dynamics."""
