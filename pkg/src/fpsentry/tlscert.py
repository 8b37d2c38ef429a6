"""Local interception credentials for HTTPS inspection.

A CertAuthority is a locally generated root that the operator installs
into the browser's trust store explicitly. The proxy mints short-lived
leaf certificates per destination host on first use so it can terminate
TLS from the browser. Nothing here ever leaves the machine; treat the
key directory like any other secret material.
"""

from __future__ import annotations

import datetime
import ipaddress
import os
import ssl
import tempfile
import threading

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.x509.oid import ExtendedKeyUsageOID, NameOID

CA_CERT_NAME = "ca_cert.pem"
CA_KEY_NAME = "ca_key.pem"

CA_DAYS = 3650
LEAF_DAYS = 398


class CredentialError(ValueError):
    """Missing or unusable interception credential."""


def _now():
    return datetime.datetime.now(datetime.timezone.utc)


def _name(common_name: str) -> x509.Name:
    return x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, common_name)])


class CertAuthority:
    """Self-signed signing root plus a per-host leaf cache."""

    def __init__(self, cert: x509.Certificate, key):
        self.cert = cert
        self.key = key
        self._lock = threading.Lock()
        self._contexts: dict[str, ssl.SSLContext] = {}

    @classmethod
    def generate(cls, common_name: str = "fpsentry local interception root") -> "CertAuthority":
        key = ec.generate_private_key(ec.SECP256R1())
        subject = _name(common_name)
        cert = (
            x509.CertificateBuilder()
            .subject_name(subject)
            .issuer_name(subject)
            .public_key(key.public_key())
            .serial_number(x509.random_serial_number())
            .not_valid_before(_now() - datetime.timedelta(days=1))
            .not_valid_after(_now() + datetime.timedelta(days=CA_DAYS))
            .add_extension(x509.BasicConstraints(ca=True, path_length=0), critical=True)
            .add_extension(
                x509.KeyUsage(
                    digital_signature=False, content_commitment=False,
                    key_encipherment=False, data_encipherment=False,
                    key_agreement=False, key_cert_sign=True, crl_sign=True,
                    encipher_only=False, decipher_only=False),
                critical=True)
            .sign(key, hashes.SHA256())
        )
        return cls(cert, key)

    @classmethod
    def load(cls, directory) -> "CertAuthority":
        cert_path = os.path.join(str(directory), CA_CERT_NAME)
        key_path = os.path.join(str(directory), CA_KEY_NAME)
        try:
            with open(cert_path, "rb") as fh:
                cert = x509.load_pem_x509_certificate(fh.read())
            with open(key_path, "rb") as fh:
                key = serialization.load_pem_private_key(fh.read(), password=None)
        except (OSError, ValueError) as exc:
            raise CredentialError("cannot load interception credential from %s: %s"
                                  % (directory, exc)) from exc
        return cls(cert, key)

    def save(self, directory) -> tuple[str, str]:
        os.makedirs(str(directory), exist_ok=True)
        cert_path = os.path.join(str(directory), CA_CERT_NAME)
        key_path = os.path.join(str(directory), CA_KEY_NAME)
        with open(cert_path, "wb") as fh:
            fh.write(self.ca_pem())
        # key is secret material
        fd = os.open(key_path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "wb") as fh:
            fh.write(self.key.private_bytes(
                serialization.Encoding.PEM,
                serialization.PrivateFormat.PKCS8,
                serialization.NoEncryption()))
        return cert_path, key_path

    def ca_pem(self) -> bytes:
        return self.cert.public_bytes(serialization.Encoding.PEM)

    def issue(self, hostname: str) -> tuple[bytes, bytes]:
        """Mint a leaf certificate for hostname; returns (cert PEM, key PEM)."""
        try:
            san: x509.GeneralName = x509.IPAddress(ipaddress.ip_address(hostname))
        except ValueError:
            san = x509.DNSName(hostname)
        key = ec.generate_private_key(ec.SECP256R1())
        cert = (
            x509.CertificateBuilder()
            .subject_name(_name(hostname))
            .issuer_name(self.cert.subject)
            .public_key(key.public_key())
            .serial_number(x509.random_serial_number())
            .not_valid_before(_now() - datetime.timedelta(days=1))
            .not_valid_after(_now() + datetime.timedelta(days=LEAF_DAYS))
            .add_extension(x509.SubjectAlternativeName([san]), critical=False)
            .add_extension(x509.BasicConstraints(ca=False, path_length=None), critical=True)
            .add_extension(x509.ExtendedKeyUsage([ExtendedKeyUsageOID.SERVER_AUTH]),
                           critical=False)
            .sign(self.key, hashes.SHA256())
        )
        cert_pem = cert.public_bytes(serialization.Encoding.PEM) + self.ca_pem()
        key_pem = key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption())
        return cert_pem, key_pem

    def server_context(self, hostname: str) -> ssl.SSLContext:
        """TLS server context presenting a minted leaf for hostname."""
        with self._lock:
            ctx = self._contexts.get(hostname)
            if ctx is not None:
                return ctx
            cert_pem, key_pem = self.issue(hostname)
            ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
            # load_cert_chain only takes paths, so stage through tempfiles
            with tempfile.TemporaryDirectory(prefix="fpsentry-leaf-") as tmp:
                cert_path = os.path.join(tmp, "leaf.pem")
                key_path = os.path.join(tmp, "leaf.key")
                with open(cert_path, "wb") as fh:
                    fh.write(cert_pem)
                with open(key_path, "wb") as fh:
                    fh.write(key_pem)
                ctx.load_cert_chain(cert_path, key_path)
            self._contexts[hostname] = ctx
            return ctx
