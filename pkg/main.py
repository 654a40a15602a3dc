#!/usr/bin/env python3
"""
NTN Traffic Forecasting - Command-Line Entry Point
"""
from src.ui.cli import main

if __name__ == "__main__":
    main()
