"""Command-line entry points.

Subcommands:
    proxy          run the capturing proxy until interrupted
    crawl          drive a browser over a site list through the proxy
    report         aggregate a capture log into CSV/JSON/plot files
    catalog        validate and summarize an attribute catalog
    make-ca        create the interception root credential
    convert-sites  strip rank columns from a top-sites CSV

`proxy` and `crawl` are separate processes on purpose: the proxy keeps
capturing while crawls come and go, and a crashed crawl never takes the
log writer down with it.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

from .analytics import aggregate
from .capture import CaptureLogError
from .catalog import CatalogError, ProfileError, load_catalog, load_profile
from .crawler import (
    CrawlConfig,
    CrawlError,
    convert_ranked_csv,
    load_site_list,
    run_crawl,
)
from .proxy import MODE_OBSERVE, MODES, ProxyConfig, ProxyError, start_proxy
from .reporter import FORMATS, build_bundle, emit
from .tlscert import CA_CERT_NAME, CertAuthority, CredentialError

log = logging.getLogger(__name__)


def _parse_alias(text: str):
    """host=address:port, the local stand-in for a remote hostname."""
    try:
        hostname, _, addr = text.partition("=")
        host, _, port = addr.rpartition(":")
        return hostname.strip(), (host.strip(), int(port))
    except ValueError:
        raise argparse.ArgumentTypeError(
            "alias must look like host=address:port, got %r" % text) from None


def _parse_hostport(text: str):
    host, _, port = text.rpartition(":")
    if not host:
        raise argparse.ArgumentTypeError("expected host:port, got %r" % text)
    try:
        return host, int(port)
    except ValueError:
        raise argparse.ArgumentTypeError("bad port in %r" % text) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fpsentry",
        description="Detect device-fingerprint values leaving the browser.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("proxy", help="run the capturing proxy")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--mode", choices=MODES, default=MODE_OBSERVE)
    p.add_argument("--https-inspect", action="store_true",
                   help="terminate TLS with a locally trusted root")
    p.add_argument("--log", default="capture.jsonl", metavar="PATH")
    p.add_argument("--catalog", metavar="PATH",
                   help="attribute catalog TSV (default: bundled)")
    p.add_argument("--profile", required=True, metavar="PATH",
                   help="device profile JSON with the values to look for")
    p.add_argument("--ca-dir", metavar="DIR",
                   help="interception credential directory (created on first use)")
    p.add_argument("--origin", metavar="HOST",
                   help="attribute captures to this origin when no visit is declared")
    p.add_argument("--alias", action="append", default=[], type=_parse_alias,
                   metavar="HOST=ADDR:PORT",
                   help="route a hostname to a local address (repeatable)")

    c = sub.add_parser("crawl", help="visit a site list through the proxy")
    c.add_argument("--sites", required=True, metavar="PATH",
                   help="site list, one hostname per line")
    c.add_argument("--delay", type=float, default=3.0,
                   help="seconds to hold each page open after load")
    c.add_argument("--timeout", type=float, default=20.0,
                   help="page load timeout in seconds")
    c.add_argument("--checkpoint-every", type=int, default=200, metavar="N")
    c.add_argument("--resume", metavar="PATH",
                   help="checkpoint file to write and resume from")
    c.add_argument("--webdriver", default="http://127.0.0.1:4444", metavar="URL")
    c.add_argument("--proxy", required=True, type=_parse_hostport,
                   metavar="HOST:PORT", help="address of the running proxy")

    r = sub.add_parser("report", help="aggregate a capture log")
    r.add_argument("--log", required=True, metavar="PATH")
    r.add_argument("--out", required=True, metavar="DIR")
    r.add_argument("--format", default=",".join(FORMATS),
                   help="comma-separated subset of: %s" % ", ".join(FORMATS))
    r.add_argument("--catalog", metavar="PATH",
                   help="include per-category attribute counts")
    r.add_argument("--top", type=int, default=10, metavar="N")

    k = sub.add_parser("catalog", help="validate and summarize a catalog")
    k.add_argument("--catalog", metavar="PATH",
                   help="attribute catalog TSV (default: bundled)")

    m = sub.add_parser("make-ca", help="create the interception root credential")
    m.add_argument("--dir", required=True, metavar="DIR")
    m.add_argument("--name", default="fpsentry local interception root",
                   help="certificate common name")

    v = sub.add_parser("convert-sites",
                       help="strip rank columns from a top-sites CSV")
    v.add_argument("src", metavar="RANKED_CSV")
    v.add_argument("dst", metavar="SITE_LIST")

    return parser


def _load_ca(directory):
    cert_path = os.path.join(str(directory), CA_CERT_NAME)
    if not os.path.exists(cert_path):
        ca = CertAuthority.generate()
        ca.save(directory)
        return ca
    # present but unreadable/corrupt must fail, not be overwritten
    return CertAuthority.load(directory)


def cmd_proxy(args) -> int:
    catalog = load_catalog(args.catalog)
    profile = load_profile(args.profile)
    ca = None
    if args.https_inspect:
        if not args.ca_dir:
            print("--https-inspect needs --ca-dir for the root credential",
                  file=sys.stderr)
            return 2
        ca = _load_ca(args.ca_dir)

    config = ProxyConfig(port=args.port, host=args.host, mode=args.mode,
                         https_inspect=args.https_inspect, log_path=args.log,
                         catalog=catalog, profile=profile, ca=ca,
                         static_origin=args.origin,
                         host_aliases=dict(args.alias))
    handle = start_proxy(config)
    # flush: operators background this command and read the port from a pipe
    print("proxy listening on %s:%d (mode=%s, https_inspect=%s)"
          % (args.host, handle.port, args.mode, args.https_inspect), flush=True)
    print("capture log: %s" % args.log, flush=True)
    if ca is not None:
        print("interception root: %s (import it into the browser)"
              % os.path.join(args.ca_dir, CA_CERT_NAME), flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        handle.close()
    return 0


def cmd_crawl(args) -> int:
    sites = load_site_list(args.sites)
    host, port = args.proxy
    config = CrawlConfig(sites=sites, webdriver_url=args.webdriver,
                         proxy_host=host, proxy_port=port,
                         post_load_delay=args.delay, page_timeout=args.timeout,
                         checkpoint_every=args.checkpoint_every,
                         checkpoint_path=args.resume)
    report = run_crawl(config)
    counts = report.status_counts
    print("visited %d sites (resumed at index %d)"
          % (len(report.outcomes) - report.resumed_from, report.resumed_from))
    print("outcomes: " + ", ".join("%s=%d" % (k, v) for k, v in counts.items()))
    print("captures attributed: %d" % report.total_captures)
    return 0


def cmd_report(args) -> int:
    formats = tuple(f.strip() for f in args.format.split(",") if f.strip())
    for fmt in formats:
        if fmt not in FORMATS:
            print("unknown format %r (choose from %s)" % (fmt, ", ".join(FORMATS)),
                  file=sys.stderr)
            return 2
    catalog = load_catalog(args.catalog) if args.catalog else None
    stats = aggregate(args.log)
    bundle = build_bundle(stats, catalog=catalog, top_n=args.top,
                          run_meta={"log": str(args.log)})
    written = emit(bundle, args.out, formats=formats)
    for path in written:
        print(path)
    return 0


def cmd_catalog(args) -> int:
    catalog = load_catalog(args.catalog)
    counts = catalog.category_counts()
    print("%d attributes, %d core" % (len(catalog), len(catalog.core)))
    for category, count in sorted(counts.items(), key=lambda kv: -kv[1]):
        print("  %-14s %d" % (category, count))
    print("core: " + ", ".join(d.id for d in catalog.core))
    return 0


def cmd_make_ca(args) -> int:
    ca = CertAuthority.generate(common_name=args.name)
    cert_path, key_path = ca.save(args.dir)
    print(cert_path)
    print(key_path)
    return 0


def cmd_convert_sites(args) -> int:
    count = convert_ranked_csv(args.src, args.dst)
    print("wrote %d sites to %s" % (count, args.dst))
    return 0


_COMMANDS = {
    "proxy": cmd_proxy,
    "crawl": cmd_crawl,
    "report": cmd_report,
    "catalog": cmd_catalog,
    "make-ca": cmd_make_ca,
    "convert-sites": cmd_convert_sites,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ProxyError, CrawlError, CatalogError, ProfileError, CaptureLogError,
            CredentialError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
