"""Desk-scale projective limits of Banach spaces: towers, graded operators, coherent flows and leaf charts."""
