# Sphinx configuration for the port_microsim_toolkit docs.
import os
import sys
sys.path.append(os.path.join("..", "src"))


project = 'port_microsim_toolkit'
author = 'Port Microsim Developers'
release = '0.1.0'

extensions = ['sphinx.ext.napoleon', 'sphinx.ext.autodoc', 'sphinx_rtd_theme']
exclude_patterns = ['_build']
autodoc_member_order = 'bysource'

html_theme = 'sphinx_rtd_theme'
