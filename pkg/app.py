from ssdiff.api import app
