"""Command-line entry points, one per plot kind plus a combined driver."""

from __future__ import annotations

import argparse
import sys

from . import KINDS, PlotSpec, VizError, plot


def _build_parser(kind: str | None) -> argparse.ArgumentParser:
    if kind is None:
        parser = argparse.ArgumentParser(
            prog="flowviz", description="Render a flowcast export as an image"
        )
        parser.add_argument("kind", choices=KINDS)
    else:
        parser = argparse.ArgumentParser(
            prog=f"flowviz-{kind.replace('_', '-')}",
            description=f"Render a {kind.replace('_', ' ')} image from flowcast exports",
        )
    parser.add_argument(
        "--in", dest="inputs", nargs="+", required=True, metavar="PATH",
        help="input file(s): CSV and/or GeoJSON exports",
    )
    parser.add_argument("--out", required=True, help="output image path (e.g. plot.png)")
    parser.add_argument(
        "--focus-node", dest="focus_node", type=int, default=None,
        help="tile id to focus on (network: only its outgoing edges)",
    )
    return parser


def _run(kind: str | None, argv) -> int:
    args = _build_parser(kind).parse_args(argv)
    try:
        spec = PlotSpec(
            kind=kind if kind is not None else args.kind,
            inputs=tuple(args.inputs),
            out=args.out,
            focus_node=args.focus_node,
        )
        print(plot(spec))
        return 0
    except VizError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    return _run(None, argv)


def main_heatmap(argv=None) -> int:
    return _run("heatmap", argv)


def main_timeseries(argv=None) -> int:
    return _run("timeseries", argv)


def main_od_matrix(argv=None) -> int:
    return _run("od_matrix", argv)


def main_flow_network(argv=None) -> int:
    return _run("flow_network", argv)


def main_metric_curve(argv=None) -> int:
    return _run("metric_curve", argv)
