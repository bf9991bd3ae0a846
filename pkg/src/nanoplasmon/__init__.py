"""Optical interaction of gold nanoparticles with surfaces and with each other."""

__version__ = "0.1.0"
