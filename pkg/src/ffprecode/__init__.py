"""Centralized and feedforward-decentralized Wiener-filter precoding for the
massive MU-MIMO downlink, with a message-counting fabric simulator and a
Monte Carlo BER harness."""

__version__ = "0.1.0"
