"""Report writers and numerical archives."""
