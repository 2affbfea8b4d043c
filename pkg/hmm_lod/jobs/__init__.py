"""Study runners behind the CLI subcommands."""
