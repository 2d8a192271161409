#!/usr/bin/env python3
# -*- coding: utf-8 -*-
#
# flockforge documentation build configuration file.

import os
import sys
sys.path.insert(0, os.path.abspath('..'))

# -- General configuration ------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.doctest',
    'sphinx.ext.intersphinx',
    'sphinx.ext.mathjax',
    'sphinx.ext.viewcode',
    'sphinx.ext.githubpages',
    'sphinx.ext.napoleon'
]

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = 'flockforge'
copyright = '2026, The flockforge developers'
author = 'The flockforge developers'

# The short X.Y version and the full version, including alpha/beta/rc tags.
version = '0.1'
release = '0.1a'

language = None
exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']
pygments_style = 'sphinx'

# numpydoc-style sections in the docstrings
napoleon_google_docstring = False
napoleon_numpy_docstring = True

# -- Options for HTML output ----------------------------------------------

html_theme = 'sphinx_rtd_theme'
html_static_path = ['_static']
htmlhelp_basename = 'flockforgedoc'

# -- Options for LaTeX, manual page and Texinfo output --------------------

latex_documents = [
    (master_doc, 'flockforge.tex', 'flockforge Documentation',
     author, 'manual'),
]

man_pages = [
    (master_doc, 'flockforge', 'flockforge Documentation', [author], 1)
]

texinfo_documents = [
    (master_doc, 'flockforge', 'flockforge Documentation', author,
     'flockforge', 'Flocking controllers for point agents and quadrotors.',
     'Miscellaneous'),
]

intersphinx_mapping = {'python': ('https://docs.python.org/3', None),
                       'numpy': ('https://numpy.org/doc/stable/', None),
                       'astropy': ('https://docs.astropy.org/en/stable/',
                                   None)}
