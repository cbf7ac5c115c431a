# Empty file to make the tests directory a Python package 