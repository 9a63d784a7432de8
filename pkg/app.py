# app.py


def main():
    # Lazy Imports: erst zur Laufzeit laden, NICHT beim Modul-Import
    from ui.cli import cli

    cli(prog_name="mll")


if __name__ == "__main__":
    main()
