"""Texture transfer between meshes through a 3D Gaussian splat cloud."""
