from .cli import main_entry


def main() -> None:
    main_entry()
