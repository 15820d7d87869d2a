//! Static credential file standing in for an external PKI.
//!
//! One client per line: `<id> <public key hex> <shuffler|client>`. Blank
//! lines and `#` comments are ignored. Shuffler order in the file fixes the
//! availability-bit positions.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::mixnet::round::directory_digest;
use crate::mixnet::{ClientId, KeyElement};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("line {0}: expected `<id> <key hex> <shuffler|client>`")]
    Syntax(usize),
    #[error("line {0}: invalid public key")]
    Key(usize),
    #[error("line {line}: duplicate client id {id}")]
    Duplicate { line: usize, id: ClientId },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegisteredClient {
    pub id: ClientId,
    pub key: KeyElement,
    pub shuffler: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClientRegistry {
    clients: Vec<RegisteredClient>,
    by_id: HashMap<ClientId, usize>,
    shufflers: Vec<ClientId>,
}

impl ClientRegistry {
    pub fn new(clients: Vec<RegisteredClient>) -> Result<Self, RegistryError> {
        let mut reg = Self::default();
        for (line, c) in clients.into_iter().enumerate() {
            reg.push(line + 1, c)?;
        }
        Ok(reg)
    }

    fn push(&mut self, line: usize, c: RegisteredClient) -> Result<(), RegistryError> {
        if self.by_id.insert(c.id, self.clients.len()).is_some() {
            return Err(RegistryError::Duplicate { line, id: c.id });
        }
        if c.shuffler {
            self.shufflers.push(c.id);
        }
        self.clients.push(c);
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, RegistryError> {
        let mut reg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let [id, key, role] = fields[..] else { return Err(RegistryError::Syntax(line)) };
            let id: ClientId = id.parse().map_err(|_| RegistryError::Syntax(line))?;
            let shuffler = match role {
                "shuffler" => true,
                "client" => false,
                _ => return Err(RegistryError::Syntax(line)),
            };
            let bytes = decode_hex(key).ok_or(RegistryError::Key(line))?;
            let key = KeyElement::from_bytes(bytes).map_err(|_| RegistryError::Key(line))?;
            reg.push(line, RegisteredClient { id, key, shuffler })?;
        }
        Ok(reg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.clients {
            let role = if c.shuffler { "shuffler" } else { "client" };
            let _ = writeln!(out, "{} {} {role}", c.id, encode_hex(c.key.as_bytes()));
        }
        out
    }

    pub fn get(&self, id: ClientId) -> Option<&RegisteredClient> {
        self.by_id.get(&id).map(|&i| &self.clients[i])
    }

    pub fn clients(&self) -> &[RegisteredClient] {
        &self.clients
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    /// Shuffler client ids in availability-bit order.
    pub fn shufflers(&self) -> &[ClientId] {
        &self.shufflers
    }

    pub fn shuffler_index(&self, id: ClientId) -> Option<usize> {
        self.shufflers.iter().position(|&s| s == id)
    }

    pub fn directory(&self) -> Vec<KeyElement> {
        self.shufflers.iter().map(|id| self.get(*id).expect("registered").key).collect()
    }

    pub fn digest(&self) -> [u8; 32] {
        directory_digest(self.directory().iter().map(|k| *k.as_bytes()))
    }
}

pub fn encode_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn decode_hex<const N: usize>(s: &str) -> Option<[u8; N]> {
    if s.len() != 2 * N || !s.is_ascii() {
        return None;
    }
    let mut out = [0u8; N];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}
