# Test modules
