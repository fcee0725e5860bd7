"""analogykit: concept -> validated definition -> three analogies ->
four-scene storyboard with component-coverage repair -> slideshow video.

All generative models sit behind pluggable backends; the bundled mock
family makes the whole pipeline runnable offline and deterministically.
"""

__version__ = "0.1.0"
