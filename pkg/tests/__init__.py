"""
Tests package for the fwplane dataplane
"""
