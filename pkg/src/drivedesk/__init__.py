"""drivedesk: a desk-scale car styling, geometry, meshing and aero toolkit."""

__version__ = "0.1.0"
