use std::cmp::Ordering;
use std::fmt;
use std::net::{Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use super::name::DomainName;

/// DNS record type code.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordType(pub u16);

impl RecordType {
    pub const A: RecordType = RecordType(1);
    pub const CNAME: RecordType = RecordType(5);
    pub const AAAA: RecordType = RecordType(28);

    /// Types admitted into the popularity list.
    pub fn is_supported(self) -> bool {
        matches!(self, Self::A | Self::AAAA | Self::CNAME)
    }

    pub fn code(self) -> u16 {
        self.0
    }
}

impl fmt::Display for RecordType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::A => f.write_str("A"),
            Self::AAAA => f.write_str("AAAA"),
            Self::CNAME => f.write_str("CNAME"),
            Self(code) => write!(f, "TYPE{code}"),
        }
    }
}

impl fmt::Debug for RecordType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for RecordType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Self::A),
            "AAAA" => Ok(Self::AAAA),
            "CNAME" => Ok(Self::CNAME),
            other => other
                .strip_prefix("TYPE")
                .unwrap_or(other)
                .parse::<u16>()
                .map(RecordType)
                .map_err(|_| format!("unknown record type {s:?}")),
        }
    }
}

/// The answer part of a record. Data length always matches the type.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum RecordAnswer {
    A(Ipv4Addr),
    Aaaa(Ipv6Addr),
    Cname(DomainName),
}

impl RecordAnswer {
    pub fn rtype(&self) -> RecordType {
        match self {
            Self::A(_) => RecordType::A,
            Self::Aaaa(_) => RecordType::AAAA,
            Self::Cname(_) => RecordType::CNAME,
        }
    }

    /// Content bytes used for canonical ordering: address octets, or the
    /// dotted target name for CNAME.
    pub fn content_bytes(&self) -> Vec<u8> {
        match self {
            Self::A(a) => a.octets().to_vec(),
            Self::Aaaa(a) => a.octets().to_vec(),
            Self::Cname(n) => n.dotted_bytes().collect(),
        }
    }

    /// Decodes an address answer from its raw data bytes.
    pub fn from_address_bytes(data: &[u8]) -> Option<Self> {
        match data.len() {
            4 => Some(Self::A(Ipv4Addr::from(<[u8; 4]>::try_from(data).ok()?))),
            16 => Some(Self::Aaaa(Ipv6Addr::from(<[u8; 16]>::try_from(data).ok()?))),
            _ => None,
        }
    }
}

impl Ord for RecordAnswer {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rtype().cmp(&other.rtype()).then_with(|| match (self, other) {
            (Self::A(a), Self::A(b)) => a.octets().cmp(&b.octets()),
            (Self::Aaaa(a), Self::Aaaa(b)) => a.octets().cmp(&b.octets()),
            (Self::Cname(a), Self::Cname(b)) => a.cmp(b),
            _ => Ordering::Equal,
        })
    }
}

impl PartialOrd for RecordAnswer {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for RecordAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::A(a) => write!(f, "{a}"),
            Self::Aaaa(a) => write!(f, "{a}"),
            Self::Cname(n) => write!(f, "{n}"),
        }
    }
}

/// A (name, type) pair. Ordered by dotted name bytes, then type code.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub name: DomainName,
    pub rtype: RecordType,
}

impl RecordKey {
    pub fn new(name: DomainName, rtype: RecordType) -> Self {
        Self { name, rtype }
    }
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.name, self.rtype)
    }
}

impl fmt::Debug for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RecordKey({self})")
    }
}

/// An owner name plus answer, i.e. one resource record of a response.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ResourceRecord {
    pub name: DomainName,
    pub answer: RecordAnswer,
}

impl ResourceRecord {
    pub fn new(name: DomainName, answer: RecordAnswer) -> Self {
        Self { name, answer }
    }
}
