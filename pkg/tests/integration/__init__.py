# Makes 'integration' a package
