"""
NTN Traffic Forecasting
Probabilistic satellite beam traffic forecasting and resource provisioning
"""
