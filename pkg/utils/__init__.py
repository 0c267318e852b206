# Utils package for SymmCompletion benchmark, selftest and test scripts
