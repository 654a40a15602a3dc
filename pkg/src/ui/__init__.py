"""
UI module for NTN traffic forecasting
Contains the command-line interface
"""
