#!/usr/bin/env python3
# Builds an English stand-in corpus from docstrings of installed Python
# packages, for machines without text8. Output is raw text; run it through
# `splm prepare` (or the acceptance --desk-corpus flag) as usual.
import argparse
import ast
import pathlib
import sys


def docstrings(path):
    try:
        tree = ast.parse(path.read_text(encoding="utf-8", errors="ignore"))
    except (SyntaxError, ValueError):
        return
    for node in ast.walk(tree):
        if isinstance(node, (ast.Module, ast.ClassDef, ast.FunctionDef, ast.AsyncFunctionDef)):
            doc = ast.get_docstring(node)
            if doc:
                yield doc


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--chars", type=int, default=5_000_000)
    ap.add_argument("roots", nargs="+", help="package directories to scan")
    args = ap.parse_args()
    written = 0
    with open(args.out, "w", encoding="utf-8") as out:
        for root in args.roots:
            for path in sorted(pathlib.Path(root).rglob("*.py")):
                for doc in docstrings(path):
                    # Keep prose lines; drop doctest and code-looking lines.
                    lines = [l for l in doc.splitlines()
                             if l.strip() and not l.lstrip().startswith((">>>", "...", "-", "=", ":"))
                             and sum(c.isalpha() or c == " " for c in l) > 0.8 * len(l)]
                    text = " ".join(l.strip() for l in lines)
                    if len(text) < 40:
                        continue
                    out.write(text + "\n")
                    written += len(text) + 1
                    if written >= args.chars:
                        print(written, "chars", file=sys.stderr)
                        return
    print(written, "chars (source exhausted)", file=sys.stderr)


if __name__ == "__main__":
    main()
