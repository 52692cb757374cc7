"""Command-line entry point: run scenarios and poke at the codecs."""

from __future__ import annotations

import argparse
import json
import sys

from . import sip_codec as sip
from .ims_core import ConfigError
from .scenarios import ScenarioConfig, emit_report, list_scenarios, run_scenario
from .sms_codec import (
    BearerData,
    CodecError,
    Encoding,
    MessageKind,
    SmsAddress,
    SmsPdu,
    UserData,
    decode_pdu,
    encode_pdu,
)

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2


def load_config(path: str) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return ScenarioConfig.from_dict(raw)


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        report = run_scenario(cfg, verbose=args.verbose)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = emit_report(report, args.format)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if not report.passed:
        failed = ", ".join(k for k, v in sorted(report.verdicts.items()) if not v)
        print(f"{report.scenario}: failed checks: {failed}", file=sys.stderr)
        return EXIT_ASSERTION
    return EXIT_OK


def cmd_list(args) -> int:
    entries = list_scenarios()
    width = max(len(name) for name, _ in entries)
    for name, desc in entries:
        print(f"{name.ljust(width)}  {desc}")
    return EXIT_OK


def pdu_to_dict(pdu: SmsPdu) -> dict:
    ud = pdu.bearer.user_data
    return {
        "teleservice_id": pdu.teleservice_id,
        "dest": pdu.dest.digits if pdu.dest else None,
        "orig": pdu.orig.digits if pdu.orig else None,
        "message_id": pdu.bearer.message_id,
        "message_kind": pdu.bearer.message_kind.name,
        "encoding": ud.encoding.name,
        "num_fields": ud.num_fields,
        "user_data": ud.payload if isinstance(ud.payload, str) else ud.payload.hex(),
    }


def cmd_sms_encode(args) -> int:
    if args.hex_payload:
        ud = UserData(bytes.fromhex(args.text), Encoding.OCTET)
    else:
        ud = UserData(args.text)
    pdu = SmsPdu(
        dest=SmsAddress(args.dest),
        orig=SmsAddress(args.orig) if args.orig else None,
        bearer=BearerData(args.message_id, ud, MessageKind[args.kind.upper()]),
        teleservice_id=args.teleservice,
    )
    print(encode_pdu(pdu).hex())
    return EXIT_OK


def cmd_sms_decode(args) -> int:
    pdu = decode_pdu(bytes.fromhex(args.hex))
    print(json.dumps(pdu_to_dict(pdu), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sip_build(args) -> int:
    from .sms_codec import make_submit

    profile = sip.DeviceProfile(args.device_number, args.device_address, args.ims_address, b"")
    body = encode_pdu(make_submit(args.to, args.text))
    env = sip.build_message_request(profile, args.from_number or args.device_number, args.to, body)
    sys.stdout.buffer.write(sip.serialize(env))
    return EXIT_OK


def cmd_sip_parse(args) -> int:
    if args.file == "-":
        data = sys.stdin.buffer.read()
    else:
        with open(args.file, "rb") as fh:
            data = fh.read()
    env = sip.parse(data)
    out = {
        "start_line": env.start_line,
        "headers": [[k, v] for k, v in env.headers],
        "body_hex": env.body.hex(),
    }
    if env.method == "MESSAGE" and env.body:
        try:
            out["sms"] = pdu_to_dict(decode_pdu(env.body))
        except CodecError as exc:
            out["sms_error"] = str(exc)
    print(json.dumps(out, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imsspoof", description="SMS-over-IMS spoofing simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--out")
    run.add_argument("--format", choices=("text", "structured"), default="text")
    run.add_argument("--verbose", action="store_true", help="include the full datagram log")
    run.set_defaults(func=cmd_run)

    ls = sub.add_parser("list-scenarios", help="print the scenario catalog")
    ls.set_defaults(func=cmd_list)

    codec = sub.add_parser("codec", help="encode and decode PDUs and SIP messages")
    csub = codec.add_subparsers(dest="codec", required=True)

    sms = csub.add_parser("sms").add_subparsers(dest="op", required=True)
    enc = sms.add_parser("encode")
    enc.add_argument("--dest", required=True)
    enc.add_argument("--text", required=True)
    enc.add_argument("--orig")
    enc.add_argument("--kind", choices=("submit", "deliver"), default="submit")
    enc.add_argument("--message-id", type=int, default=0)
    enc.add_argument("--teleservice", type=int, default=4098)
    enc.add_argument("--hex-payload", action="store_true", help="treat --text as hex octets")
    enc.set_defaults(func=cmd_sms_encode)
    dec = sms.add_parser("decode")
    dec.add_argument("hex")
    dec.set_defaults(func=cmd_sms_decode)

    sipp = csub.add_parser("sip").add_subparsers(dest="op", required=True)
    build = sipp.add_parser("build-message")
    build.add_argument("--device-number", required=True)
    build.add_argument("--from", dest="from_number", help="From number; defaults to the device number")
    build.add_argument("--to", required=True)
    build.add_argument("--text", required=True)
    build.add_argument("--device-address", default="2001:db8:1:100::1")
    build.add_argument("--ims-address", default="2001:db8:1::5")
    build.set_defaults(func=cmd_sip_build)
    parse = sipp.add_parser("parse")
    parse.add_argument("file", nargs="?", default="-")
    parse.set_defaults(func=cmd_sip_parse)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CodecError, sip.SipError, sip.SipParseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
