"""Consistent IV estimation for second-order modulus models."""
