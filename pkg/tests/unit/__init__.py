# Makes 'unit' a package
