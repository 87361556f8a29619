# -*- coding: utf-8 -*-
#
# epiunwarp documentation build configuration file.

import sys, os

sys.path.insert(0, os.path.abspath('..'))

# -- General configuration -----------------------------------------------------

extensions = ['sphinx.ext.autodoc', 'sphinx.ext.viewcode']

templates_path = ['.templates']
source_suffix = '.rst'
master_doc = 'index'

project = 'epiunwarp'
copyright = '2026, the epiunwarp developers'

version = '0.1'
release = '0.1'

exclude_patterns = ['.build']
pygments_style = 'sphinx'

autodoc_member_order = 'bysource'

# -- Options for HTML output ---------------------------------------------------

html_theme = 'default'
html_static_path = ['.static']
htmlhelp_basename = 'epiunwarpdoc'

# -- Options for LaTeX output --------------------------------------------------

latex_elements = {
}

latex_documents = [
  ('index', 'epiunwarp.tex', 'epiunwarp Documentation',
   'the epiunwarp developers', 'manual'),
]

# -- Options for manual page output --------------------------------------------

man_pages = [
    ('index', 'epiunwarp', 'epiunwarp Documentation',
     ['the epiunwarp developers'], 1)
]
