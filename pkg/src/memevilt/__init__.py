"""Single-stream vision-language transformer for hateful-meme classification, in numpy."""

__version__ = "0.1.0"
