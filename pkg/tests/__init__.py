# Tests for flood-surrogate
