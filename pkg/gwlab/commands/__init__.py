"""CLI subcommand groups registered by gwlab.main."""
