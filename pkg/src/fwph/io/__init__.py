"""Instance formats, the instance generator, and trace files."""
