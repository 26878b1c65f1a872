def pytest_addoption(parser):
    parser.addoption(
        "--live",
        action="store_true",
        default=False,
        help="run the smoke test against a real endpoint (needs LRTAB_API_BASE, "
        "LRTAB_API_KEY, LRTAB_LIVE_DATASET)",
    )
