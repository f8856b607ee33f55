# criterion -> result line, filled by the acceptance tests and printed at session end
LINES: dict[str, str] = {}
