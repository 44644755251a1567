"""
Tests package for the TSDF toolkit
"""
