"""ANRA: direct thermal diffusivity estimation from thermographic frame stacks."""
