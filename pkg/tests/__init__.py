# Makes 'tests' a package
