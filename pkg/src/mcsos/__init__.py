"""SOS certificates and two-stage SDP recovery for rank-1 matrix completion."""
__version__ = "0.1.0"
