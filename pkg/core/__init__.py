import sys