//! Plain-UDP DNS client used by the server for list re-queries.

use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use lluad_core::dns::wire::{encode_query, parse_response, Rcode};
use lluad_core::dns::RecordKey;
use lluad_core::maintenance::{Resolution, Upstream, UpstreamError};

pub struct UdpUpstream {
    server: SocketAddr,
    timeout: Duration,
    socket: Option<UdpSocket>,
    next_id: u16,
}

impl UdpUpstream {
    pub fn new(server: SocketAddr, timeout: Duration) -> Self {
        Self { server, timeout, socket: None, next_id: rand::random() }
    }

    fn socket(&mut self) -> std::io::Result<&UdpSocket> {
        if self.socket.is_none() {
            let bind: SocketAddr = if self.server.is_ipv4() {
                ([0, 0, 0, 0], 0).into()
            } else {
                (std::net::Ipv6Addr::UNSPECIFIED, 0).into()
            };
            let s = UdpSocket::bind(bind)?;
            s.connect(self.server)?;
            self.socket = Some(s);
        }
        Ok(self.socket.as_ref().expect("just bound"))
    }

    fn exchange(&mut self, key: &RecordKey) -> Result<Vec<u8>, std::io::Error> {
        let id = self.next_id;
        self.next_id = self.next_id.wrapping_add(1);
        let timeout = self.timeout;
        let socket = self.socket()?;
        socket.send(&encode_query(id, key))?;
        let deadline = Instant::now() + timeout;
        let mut buf = vec![0u8; 4096];
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(std::io::ErrorKind::TimedOut.into());
            }
            socket.set_read_timeout(Some(left))?;
            let n = socket.recv(&mut buf)?;
            // Stale replies to earlier, timed-out queries are skipped.
            if n >= 2 && u16::from_be_bytes([buf[0], buf[1]]) == id {
                buf.truncate(n);
                return Ok(buf);
            }
        }
    }
}

impl Upstream for UdpUpstream {
    fn resolve(&mut self, key: &RecordKey, _now: Duration) -> Result<Resolution, UpstreamError> {
        let bytes = self.exchange(key).map_err(|e| {
            self.socket = None;
            UpstreamError::Failure(e.to_string())
        })?;
        let response = parse_response(&bytes).map_err(|e| UpstreamError::Failure(e.to_string()))?;
        match response.rcode {
            Rcode::NoError if response.answers.is_empty() => Err(UpstreamError::NoData),
            Rcode::NoError => Ok(Resolution { records: response.answers }),
            Rcode::NxDomain => Err(UpstreamError::NxDomain),
            other => Err(UpstreamError::Failure(format!("upstream answered {other:?}"))),
        }
    }
}
