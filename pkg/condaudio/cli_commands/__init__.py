# package marker for discovered CLI subcommands
