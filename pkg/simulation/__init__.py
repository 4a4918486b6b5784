# This file makes the 'simulation' directory a Python package
