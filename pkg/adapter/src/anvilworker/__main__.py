import argparse
import sys

from .serve import serve


def main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="anvilworker",
        description="Host a subject module and serve wire protocol v1 on stdio.",
    )
    p.add_argument("subject_root", help="directory prepended to sys.path")
    p.add_argument("module_id", help="importable module id of the subject")
    args = p.parse_args(argv)
    return serve(args.subject_root, args.module_id)


if __name__ == "__main__":
    sys.exit(main())
