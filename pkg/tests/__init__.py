# Tests for the NISE toolkit
