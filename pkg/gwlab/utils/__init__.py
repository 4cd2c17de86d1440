"""Text helpers: question normalization and the template grammar."""
