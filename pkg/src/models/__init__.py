"""
Models module for NTN traffic forecasting
Contains the numpy network core and the SFF and LSTM forecasters
"""
