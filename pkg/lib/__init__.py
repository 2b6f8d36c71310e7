"""
Library modules for the conversational uptake toolkit
"""

__version__ = "1.0.0"
__author__ = "Uptake Toolkit"
