"""
Core module for NTN traffic forecasting
Contains data handling, the decision engine, metrics and the rApp simulator
"""
