"""Malformed-input fixtures: (case id, parser, text, 1-based line of the fault)."""

GOOD = "+1 1:0.5 3:2.0\n-1 2:1\n"

CASES = [
    ("non_numeric_label", "libsvm", GOOD + "abc 1:2\n", 3),
    ("fractional_label", "libsvm", GOOD + "1.5 1:2\n", 3),
    ("missing_colon", "libsvm", GOOD + "1 3\n", 3),
    ("double_colon", "libsvm", GOOD + "1 2:3:4\n", 3),
    ("non_integer_index", "libsvm", GOOD + "1 a:2\n", 3),
    ("zero_index", "libsvm", "1 0:2\n" + GOOD, 1),
    ("negative_index", "libsvm", GOOD + "# note\n1 -1:2\n", 4),
    ("descending_index", "libsvm", GOOD + "1 3:1 2:1\n", 3),
    ("repeated_index", "libsvm", GOOD + "\n1 2:1 2:1\n", 4),
    ("non_numeric_value", "libsvm", GOOD + "1 2:x\n", 3),
    ("non_finite_value", "libsvm", GOOD + "1 2:inf\n", 3),
    ("csv_ragged_row", "csv", "a,b,label\n1,2,0\n3,1\n", 3),
]
