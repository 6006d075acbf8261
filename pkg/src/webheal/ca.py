"""Local certificate authority for TLS interception.

The forward proxy terminates TLS for intercepted hosts with leaf
certificates minted on the fly and signed by a locally generated CA that
the client must trust explicitly. Leaf certs are cached per host.
"""

from __future__ import annotations

import datetime
import ipaddress
import ssl
import tempfile
import threading
from pathlib import Path
from typing import Optional

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import rsa
from cryptography.x509.oid import NameOID

__all__ = ["CertificateAuthority", "generate_ca", "load_ca"]

_ONE_DAY = datetime.timedelta(days=1)
_CA_LIFETIME = datetime.timedelta(days=3650)
_LEAF_LIFETIME = datetime.timedelta(days=825)


def _name(common_name: str) -> x509.Name:
    return x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, common_name)])


def generate_ca(cert_path: Path, key_path: Path) -> "CertificateAuthority":
    """Create a fresh CA key pair and write PEM files."""
    key = rsa.generate_private_key(public_exponent=65537, key_size=2048)
    now = datetime.datetime.now(datetime.timezone.utc)
    cert = (
        x509.CertificateBuilder()
        .subject_name(_name("self-healing proxy CA"))
        .issuer_name(_name("self-healing proxy CA"))
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - _ONE_DAY)
        .not_valid_after(now + _CA_LIFETIME)
        .add_extension(x509.BasicConstraints(ca=True, path_length=0), critical=True)
        .add_extension(
            x509.KeyUsage(
                digital_signature=True,
                key_cert_sign=True,
                crl_sign=True,
                content_commitment=False,
                key_encipherment=False,
                data_encipherment=False,
                key_agreement=False,
                encipher_only=False,
                decipher_only=False,
            ),
            critical=True,
        )
        .sign(key, hashes.SHA256())
    )
    cert_path = Path(cert_path)
    key_path = Path(key_path)
    cert_path.write_bytes(cert.public_bytes(serialization.Encoding.PEM))
    key_path.write_bytes(
        key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.TraditionalOpenSSL,
            serialization.NoEncryption(),
        )
    )
    return CertificateAuthority(cert=cert, key=key)


def load_ca(cert_path: Path, key_path: Path) -> "CertificateAuthority":
    cert = x509.load_pem_x509_certificate(Path(cert_path).read_bytes())
    key = serialization.load_pem_private_key(Path(key_path).read_bytes(), password=None)
    return CertificateAuthority(cert=cert, key=key)


class CertificateAuthority:
    """Signs per-host leaf certificates; caches one SSL context per host."""

    def __init__(self, cert: x509.Certificate, key) -> None:
        self.cert = cert
        self.key = key
        self._lock = threading.Lock()
        self._contexts: dict[str, ssl.SSLContext] = {}
        # Leaf certs share one key; generating RSA keys per host is the
        # slow part and buys nothing against a local CA.
        self._leaf_key = rsa.generate_private_key(public_exponent=65537, key_size=2048)

    def issue(self, host: str) -> tuple[bytes, bytes]:
        """PEM (cert, key) for a host; host may be a DNS name or IP."""
        try:
            san: x509.GeneralName = x509.IPAddress(ipaddress.ip_address(host))
        except ValueError:
            san = x509.DNSName(host)
        now = datetime.datetime.now(datetime.timezone.utc)
        cert = (
            x509.CertificateBuilder()
            .subject_name(_name(host))
            .issuer_name(self.cert.subject)
            .public_key(self._leaf_key.public_key())
            .serial_number(x509.random_serial_number())
            .not_valid_before(now - _ONE_DAY)
            .not_valid_after(now + _LEAF_LIFETIME)
            .add_extension(x509.SubjectAlternativeName([san]), critical=False)
            .add_extension(x509.BasicConstraints(ca=False, path_length=None), critical=True)
            .sign(self.key, hashes.SHA256())
        )
        cert_pem = cert.public_bytes(serialization.Encoding.PEM)
        key_pem = self._leaf_key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.TraditionalOpenSSL,
            serialization.NoEncryption(),
        )
        return cert_pem, key_pem

    def server_context(self, host: str) -> ssl.SSLContext:
        """TLS server context presenting a leaf certificate for host."""
        with self._lock:
            ctx = self._contexts.get(host)
            if ctx is not None:
                return ctx
        cert_pem, key_pem = self.issue(host)
        ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
        # load_cert_chain only reads files; keep them in a private tmp dir.
        with tempfile.TemporaryDirectory(prefix="selfheal-leaf-") as tmp:
            cert_file = Path(tmp) / "leaf.pem"
            key_file = Path(tmp) / "leaf.key"
            cert_file.write_bytes(cert_pem)
            key_file.write_bytes(key_pem)
            ctx.load_cert_chain(str(cert_file), str(key_file))
        with self._lock:
            self._contexts[host] = ctx
        return ctx


def ensure_ca(cert_path: Optional[Path], key_path: Optional[Path]) -> CertificateAuthority:
    """Load the CA if both files exist, otherwise generate and persist it."""
    if cert_path is None or key_path is None:
        raise ValueError("TLS interception requires --ca-cert and --ca-key paths")
    cert_path = Path(cert_path)
    key_path = Path(key_path)
    if cert_path.is_file() and key_path.is_file():
        return load_ca(cert_path, key_path)
    return generate_ca(cert_path, key_path)
