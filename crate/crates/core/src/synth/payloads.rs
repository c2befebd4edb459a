//! Application-layer message builders.

use rand::RngCore;

use super::spec::{
    AuthScheme, DhcpSpec, DnsSpec, ExtSpec, HttpSpec, NtpSpec, SsdpKindSpec, SsdpSpec, TlsSpec,
};
use crate::attrs::dhcp::MAGIC_COOKIE;
use crate::attrs::Version;
use crate::packet_io::MacAddr;

/// Request and response bytes of one exchange. UDP protocols send each
/// element as its own datagram.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct Exchange {
    pub request: Vec<Vec<u8>>,
    pub response: Vec<Vec<u8>>,
}

fn extensions_block(exts: &[ExtSpec]) -> Vec<u8> {
    if exts.is_empty() {
        return Vec::new();
    }
    let mut block = Vec::new();
    for e in exts {
        block.extend_from_slice(&e.ext_type.to_be_bytes());
        block.extend_from_slice(&e.length.to_be_bytes());
        block.extend((0..e.length).map(|i| (i as u8).wrapping_mul(31)));
    }
    let mut out = (block.len() as u16).to_be_bytes().to_vec();
    out.extend_from_slice(&block);
    out
}

fn handshake(msg_type: u8, body: &[u8]) -> Vec<u8> {
    let mut hs = vec![msg_type];
    hs.extend_from_slice(&(body.len() as u32).to_be_bytes()[1..]);
    hs.extend_from_slice(body);
    hs
}

fn record(version: Version, body: &[u8]) -> Vec<u8> {
    let mut rec = vec![22, version.0, version.1];
    rec.extend_from_slice(&(body.len() as u16).to_be_bytes());
    rec.extend_from_slice(body);
    rec
}

pub(crate) fn tls(spec: &TlsSpec, rng: &mut dyn RngCore) -> Exchange {
    let mut random = [0u8; 32];
    rng.fill_bytes(&mut random);
    let mut ch = vec![spec.client_version.0, spec.client_version.1];
    ch.extend_from_slice(&random);
    ch.push(0);
    ch.extend_from_slice(&((spec.ciphers.len() * 2) as u16).to_be_bytes());
    for c in &spec.ciphers {
        ch.extend_from_slice(&c.to_be_bytes());
    }
    ch.extend_from_slice(&[1, 0]);
    ch.extend_from_slice(&extensions_block(&spec.extensions));
    let request = record(spec.record_version, &handshake(1, &ch));

    let response = spec.server.as_ref().map(|s| {
        rng.fill_bytes(&mut random);
        let mut sh = vec![s.version.0, s.version.1];
        sh.extend_from_slice(&random);
        sh.push(0);
        sh.extend_from_slice(&s.cipher.to_be_bytes());
        sh.push(0);
        sh.extend_from_slice(&extensions_block(&s.extensions));
        let mut msgs = handshake(2, &sh);
        if s.certificate {
            let cert = [0x30u8, 0x82, 0x00, 0x04, 0xde, 0xad, 0xbe, 0xef];
            let mut body = vec![0, 0, (cert.len() + 3) as u8, 0, 0, cert.len() as u8];
            body.extend_from_slice(&cert);
            msgs.extend_from_slice(&handshake(11, &body));
        }
        msgs.extend_from_slice(&handshake(14, &[]));
        let rec_version = if s.version.0 == 3 && s.version.1 <= 3 { s.version } else { Version::TLS1_2 };
        record(rec_version, &msgs)
    });
    Exchange {
        request: vec![request],
        response: response.into_iter().collect(),
    }
}

pub(crate) fn http(spec: &HttpSpec) -> Exchange {
    let mut req = String::new();
    match spec.version {
        None => req.push_str(&format!("{} {}\r\n", spec.method, spec.uri)),
        Some(v) => {
            req.push_str(&format!("{} {} HTTP/{}\r\n", spec.method, spec.uri, v));
            if let Some(h) = &spec.host {
                req.push_str(&format!("Host: {h}\r\n"));
            }
            if let Some(ua) = &spec.user_agent {
                req.push_str(&format!("User-Agent: {ua}\r\n"));
            }
            if let Some(a) = &spec.auth {
                let scheme = match a.scheme {
                    AuthScheme::Basic => "Basic",
                    AuthScheme::Digest => "Digest",
                    AuthScheme::Bearer => "Bearer",
                };
                req.push_str(&format!("Authorization: {scheme} {}\r\n", a.credential));
            }
            req.push_str("Accept: */*\r\n");
            if !spec.body.is_empty() {
                req.push_str(&format!("Content-Length: {}\r\n", spec.body.len()));
            }
            req.push_str("\r\n");
            req.push_str(&spec.body);
        }
    }
    let response = spec.response.as_ref().map(|r| {
        let mut s = format!("HTTP/{} {} {}\r\n", r.version, r.status, r.phrase);
        if let Some(srv) = &r.server {
            s.push_str(&format!("Server: {srv}\r\n"));
        }
        s.push_str(&format!("Content-Length: {}\r\n\r\n{}", r.body.len(), r.body));
        s.into_bytes()
    });
    Exchange {
        request: vec![req.into_bytes()],
        response: response.into_iter().collect(),
    }
}

fn dns_name(qname: &str) -> Vec<u8> {
    let mut out = Vec::new();
    for label in qname.trim_end_matches('.').split('.').filter(|l| !l.is_empty()) {
        out.push(label.len() as u8);
        out.extend_from_slice(label.as_bytes());
    }
    out.push(0);
    out
}

pub(crate) fn dns(spec: &DnsSpec) -> Exchange {
    let question = {
        let mut q = dns_name(&spec.qname);
        q.extend_from_slice(&spec.qtype.to_be_bytes());
        q.extend_from_slice(&1u16.to_be_bytes());
        q
    };
    let mut query = spec.id.to_be_bytes().to_vec();
    query.extend_from_slice(&[0x01, 0x00, 0, 1, 0, 0, 0, 0, 0, 0]);
    query.extend_from_slice(&question);

    let answer = spec.rcode.map(|rcode| {
        let answers = u16::from(rcode == 0 && spec.qtype == 1);
        let mut a = spec.id.to_be_bytes().to_vec();
        a.extend_from_slice(&[0x81, 0x80 | (rcode & 0x0f), 0, 1]);
        a.extend_from_slice(&answers.to_be_bytes());
        a.extend_from_slice(&[0, 0, 0, 0]);
        a.extend_from_slice(&question);
        if answers == 1 {
            a.extend_from_slice(&[0xc0, 0x0c, 0, 1, 0, 1, 0, 0, 0x0e, 0x10, 0, 4, 93, 184, 216, 34]);
        }
        a
    });
    let frame = |m: Vec<u8>| {
        if spec.tcp {
            let mut f = (m.len() as u16).to_be_bytes().to_vec();
            f.extend_from_slice(&m);
            f
        } else {
            m
        }
    };
    Exchange {
        request: vec![frame(query)],
        response: answer.map(frame).into_iter().collect(),
    }
}

const NTP_LEN: usize = 48;

fn ntp_packet(version: u8, mode: u8, stratum: u8, org: [u8; 8], xmit: [u8; 8]) -> Vec<u8> {
    let mut p = vec![0u8; NTP_LEN];
    p[0] = ((version & 0x07) << 3) | (mode & 0x07);
    p[1] = stratum;
    p[2] = 6;
    p[3] = 0xec;
    p[24..32].copy_from_slice(&org);
    p[32..40].copy_from_slice(&xmit);
    p[40..48].copy_from_slice(&xmit);
    p
}

pub(crate) fn ntp(spec: &NtpSpec, rng: &mut dyn RngCore) -> Exchange {
    let mut xmit = [0u8; 8];
    rng.fill_bytes(&mut xmit);
    xmit[0] = 0xe5;
    let request = ntp_packet(spec.client_version, spec.client_mode, 0, [0; 8], xmit);
    let response = spec.server.map(|s| {
        let org = if s.org_zero { [0; 8] } else { xmit };
        let mut p = ntp_packet(s.version, s.mode, 2, org, xmit);
        p[12..16].copy_from_slice(b"GPS\0");
        p
    });
    Exchange {
        request: vec![request],
        response: response.into_iter().collect(),
    }
}

fn bootp(op: u8, xid: u32, chaddr: MacAddr, cookie_ok: bool, options: &[u8]) -> Vec<u8> {
    let mut p = vec![0u8; 240];
    p[0] = op;
    p[1] = 1;
    p[2] = 6;
    p[4..8].copy_from_slice(&xid.to_be_bytes());
    p[10] = 0x80;
    p[28..34].copy_from_slice(&chaddr.0);
    let cookie = if cookie_ok { MAGIC_COOKIE } else { [0x63, 0x82, 0x53, 0x00] };
    p[236..240].copy_from_slice(&cookie);
    p.extend_from_slice(options);
    p.push(255);
    if p.len() < 300 {
        p.resize(300, 0);
    }
    p
}

pub(crate) fn dhcp(spec: &DhcpSpec, client_mac: MacAddr) -> Exchange {
    let mut opts = vec![53, 1, spec.message_type];
    if !spec.params.is_empty() {
        opts.push(55);
        opts.push(spec.params.len() as u8);
        opts.extend_from_slice(&spec.params);
    }
    if let Some(h) = &spec.hostname {
        opts.push(12);
        opts.push(h.len() as u8);
        opts.extend_from_slice(h.as_bytes());
    }
    let request = bootp(1, spec.xid, client_mac, spec.cookie_ok, &opts);
    let response = spec.reply.map(|t| {
        let opts = [53, 1, t, 54, 4, 192, 168, 1, 1, 51, 4, 0, 1, 0x51, 0x80];
        bootp(2, spec.xid, client_mac, spec.cookie_ok, &opts)
    });
    Exchange {
        request: vec![request],
        response: response.into_iter().collect(),
    }
}

pub(crate) fn ssdp(spec: &SsdpSpec, host: &str) -> Exchange {
    let mut s = match spec.kind {
        SsdpKindSpec::Notify => format!("NOTIFY * HTTP/1.1\r\nHOST: {host}\r\nCACHE-CONTROL: max-age=1800\r\n"),
        SsdpKindSpec::Msearch => {
            format!("M-SEARCH * HTTP/1.1\r\nHOST: {host}\r\nMAN: \"ssdp:discover\"\r\nMX: 2\r\n")
        }
        SsdpKindSpec::Response => "HTTP/1.1 200 OK\r\nCACHE-CONTROL: max-age=1800\r\nEXT:\r\n".to_string(),
    };
    for (name, value) in [
        ("NT", &spec.nt),
        ("NTS", &spec.nts),
        ("ST", &spec.st),
        ("USN", &spec.usn),
        ("SERVER", &spec.server),
    ] {
        if let Some(v) = value {
            s.push_str(&format!("{name}: {v}\r\n"));
        }
    }
    s.push_str("\r\n");
    Exchange {
        request: vec![s.into_bytes()],
        response: Vec::new(),
    }
}
