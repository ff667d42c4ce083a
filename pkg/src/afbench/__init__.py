"""Graph surrogates and stress-force metrics for 2-D airfoil RANS benchmarks."""
