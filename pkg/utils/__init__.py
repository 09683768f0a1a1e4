# Utils package: errors, logging and input validation
