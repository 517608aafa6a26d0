# Command-Line Package
