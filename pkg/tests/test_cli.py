"""Command-line behavior, exercised through main() and one real pipeline."""

import json
from pathlib import Path

import pytest

from fpsentry.cli import _parse_alias, _parse_hostport, build_parser, main
from fpsentry.crawler import load_site_list
from fpsentry.reporter import parse_report_json
from fpsentry.tlscert import CertAuthority

from support.browser_sim import BrowserSim
from support.fixture_cluster import FixtureCluster
from support.profiles import PROFILE_DATA


@pytest.fixture
def profile_path(tmp_path):
    path = tmp_path / "profile.json"
    path.write_text(json.dumps(PROFILE_DATA))
    return str(path)


def test_parser_covers_subcommands():
    parser = build_parser()
    args = parser.parse_args(["proxy", "--profile", "p.json", "--mode", "block"])
    assert args.command == "proxy" and args.mode == "block"
    args = parser.parse_args(["crawl", "--sites", "s.txt", "--proxy", "h:1"])
    assert args.delay == 3.0 and args.timeout == 20.0
    assert args.checkpoint_every == 200
    args = parser.parse_args(["report", "--log", "l", "--out", "o"])
    assert args.format == "csv,json,plot"


def test_alias_and_hostport_parsing():
    assert _parse_alias("a.test=127.0.0.1:80") == ("a.test", ("127.0.0.1", 80))
    assert _parse_hostport("127.0.0.1:8080") == ("127.0.0.1", 8080)
    with pytest.raises(Exception):
        _parse_hostport("no-port")


def test_catalog_command(capsys):
    assert main(["catalog"]) == 0
    out = capsys.readouterr().out
    assert "286 attributes, 17 core" in out
    assert "WebGL" in out and "resolution" in out


def test_make_ca_command(tmp_path, capsys):
    assert main(["make-ca", "--dir", str(tmp_path / "ca")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2
    ca = CertAuthority.load(tmp_path / "ca")
    assert b"BEGIN CERTIFICATE" in ca.ca_pem()


def test_convert_sites_command(tmp_path, capsys):
    src = tmp_path / "ranked.csv"
    dst = tmp_path / "sites.txt"
    src.write_text("rank,domain\n1,alpha.test\n2,beta.test\n")
    assert main(["convert-sites", str(src), str(dst)]) == 0
    assert load_site_list(dst) == ("alpha.test", "beta.test")


def test_report_rejects_unknown_format(tmp_path, capsys):
    log = tmp_path / "log.jsonl"
    log.write_text("")
    code = main(["report", "--log", str(log), "--out", str(tmp_path / "out"),
                 "--format", "xml"])
    assert code == 2
    assert "unknown format" in capsys.readouterr().err


def test_report_on_synthetic_log(tmp_path, capsys):
    log = Path(__file__).parent / "data" / "synthetic_capture_log.jsonl"
    out_dir = tmp_path / "report"
    code = main(["report", "--log", str(log),
                 "--out", str(out_dir), "--format", "csv,json"])
    assert code == 0
    doc = parse_report_json(out_dir / "report.json")
    assert doc["summary"]["sites_total"] == 22
    printed = capsys.readouterr().out
    assert "report.json" in printed and "summary.csv" in printed


def test_proxy_missing_profile_errors(tmp_path, capsys):
    code = main(["proxy", "--profile", str(tmp_path / "absent.json")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_proxy_https_inspect_needs_ca_dir(profile_path, capsys):
    code = main(["proxy", "--profile", profile_path, "--https-inspect"])
    assert code == 2
    assert "--ca-dir" in capsys.readouterr().err


def test_crawl_unreachable_endpoint_errors(tmp_path, capsys):
    sites = tmp_path / "sites.txt"
    sites.write_text("a.test\n")
    code = main(["crawl", "--sites", str(sites), "--proxy", "127.0.0.1:1",
                 "--webdriver", "http://127.0.0.1:1"])
    assert code == 1
    assert "unreachable" in capsys.readouterr().err


def test_cli_pipeline_end_to_end(tmp_path, profile_path, capsys):
    """crawl + report share nothing with the proxy but files and sockets."""
    from fpsentry.catalog import load_catalog, load_profile
    from fpsentry.proxy import ProxyConfig, start_proxy

    cluster = FixtureCluster()
    sim = BrowserSim()
    log_path = tmp_path / "capture.jsonl"
    sites_path = tmp_path / "sites.txt"
    sites_path.write_text("form-exfil.test\npixel-exfil.test\nclean-control.test\n")

    config = ProxyConfig(port=0, mode="observe", log_path=str(log_path),
                         catalog=load_catalog(), profile=load_profile(profile_path),
                         host_aliases=cluster.aliases)
    handle = start_proxy(config)
    try:
        code = main(["crawl", "--sites", str(sites_path),
                     "--proxy", "127.0.0.1:%d" % handle.port,
                     "--webdriver", sim.url, "--delay", "0",
                     "--timeout", "5",
                     "--resume", str(tmp_path / "ck.json")])
        assert code == 0
        out = capsys.readouterr().out
        assert "visited 3 sites" in out
        assert "captures attributed: 2" in out

        code = main(["report", "--log", str(log_path),
                     "--out", str(tmp_path / "out")])
        assert code == 0
        doc = parse_report_json(tmp_path / "out" / "report.json")
        assert doc["summary"]["sites_total"] == 3
        assert doc["summary"]["fingerprinting_sites"] == 2
    finally:
        handle.close()
        sim.close()
        cluster.close()
