"""Single source of truth for package version."""

PACKAGE_VERSION = "0.1.0"
