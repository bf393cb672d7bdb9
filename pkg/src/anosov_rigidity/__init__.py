"""Numerical toolkit for periodic data, SRB densities and approximate smooth conjugacies of area-preserving Anosov maps of the 2-torus."""
