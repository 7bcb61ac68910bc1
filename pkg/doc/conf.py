# dfl-sentinel documentation build configuration file.
import os
import sys

sys.path.insert(0, os.path.abspath('..'))

import dfl_sentinel  # noqa: E402

extensions = ['sphinx.ext.autodoc',
              'sphinx.ext.intersphinx',
              'sphinx.ext.todo',
]

autodoc_default_flags = ['members']

templates_path = ['_templates']

source_suffix = '.rst'

master_doc = 'index'

project = u'dfl-sentinel'
copyright = u'2024, dfl-sentinel contributors'
author = u'dfl-sentinel contributors'

version = dfl_sentinel.__version__
release = dfl_sentinel.__version__

language = 'en'

exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']

pygments_style = 'sphinx'

todo_include_todos = True

html_theme = 'sphinx_rtd_theme'

htmlhelp_basename = 'dfl-sentineldoc'

latex_documents = [
    (master_doc, 'dfl-sentinel.tex', u'dfl-sentinel Documentation',
     author, 'manual'),
]

man_pages = [
    (master_doc, 'dfl-sentinel', u'dfl-sentinel Documentation',
     [author], 1)
]

intersphinx_mapping = {'python': ('https://docs.python.org/3',  None),
                       'numpy': ('https://numpy.org/doc/stable', None)}

autoclass_content = "both"
