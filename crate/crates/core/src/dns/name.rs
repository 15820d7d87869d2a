use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Maximum length of a single label in bytes.
pub const MAX_LABEL_LEN: usize = 63;
/// Maximum length of a name in dotted presentation form (no trailing dot).
pub const MAX_NAME_LEN: usize = 253;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NameError {
    #[error("the root name is not a valid record owner")]
    Root,
    #[error("empty label")]
    EmptyLabel,
    #[error("label longer than {MAX_LABEL_LEN} bytes")]
    LabelTooLong,
    #[error("name longer than {MAX_NAME_LEN} bytes")]
    NameTooLong,
    #[error("label contains byte {0:#04x}")]
    InvalidByte(u8),
}

/// A lowercase, non-root domain name.
///
/// Labels are stored most-significant first, i.e. `www.example.com` is kept as
/// `["com", "example", "www"]`, which is the order the popularity list tree is
/// walked in.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct DomainName {
    labels: Vec<String>,
}

impl DomainName {
    /// Builds a name from labels given in most-significant-first order.
    pub fn from_labels<I, S>(labels: I) -> Result<Self, NameError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let mut out = Vec::new();
        let mut total = 0usize;
        for label in labels {
            let label = normalize_label(label.as_ref())?;
            total += label.len() + usize::from(!out.is_empty());
            out.push(label);
        }
        if out.is_empty() {
            return Err(NameError::Root);
        }
        if total > MAX_NAME_LEN {
            return Err(NameError::NameTooLong);
        }
        Ok(Self { labels: out })
    }

    /// Builds a name from wire-order labels (least-significant first).
    pub fn from_wire_labels<S: AsRef<[u8]>>(labels: &[S]) -> Result<Self, NameError> {
        Self::from_labels(labels.iter().rev())
    }

    /// Wraps labels that are already validated and lowercased.
    pub(crate) fn from_normalized(labels: Vec<String>) -> Self {
        debug_assert!(!labels.is_empty());
        Self { labels }
    }

    /// Labels, most-significant first.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    /// Length of the dotted form without a trailing dot.
    pub fn dotted_len(&self) -> usize {
        self.labels.iter().map(String::len).sum::<usize>() + self.labels.len() - 1
    }

    /// Length of the uncompressed RFC 1035 encoding, including the root byte.
    pub fn wire_len(&self) -> usize {
        self.labels.iter().map(|l| l.len() + 1).sum::<usize>() + 1
    }

    /// Bytes of the dotted presentation form, `www.example.com`.
    pub fn dotted_bytes(&self) -> impl Iterator<Item = u8> + '_ {
        self.labels
            .iter()
            .rev()
            .enumerate()
            .flat_map(|(i, label)| (i > 0).then_some(b'.').into_iter().chain(label.bytes()))
    }

    /// True when `self` is `other` or lies below it.
    pub fn is_subdomain_of(&self, other: &DomainName) -> bool {
        self.labels.starts_with(&other.labels)
    }

    /// Letters, digits, hyphen and underscore only, no leading or trailing
    /// hyphen. Stricter than what the codec accepts; used to filter traces.
    pub fn is_hostname_compliant(&self) -> bool {
        self.labels.iter().all(|l| {
            l.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
                && !l.starts_with('-')
                && !l.ends_with('-')
        })
    }
}

fn normalize_label(raw: &[u8]) -> Result<String, NameError> {
    if raw.is_empty() {
        return Err(NameError::EmptyLabel);
    }
    if raw.len() > MAX_LABEL_LEN {
        return Err(NameError::LabelTooLong);
    }
    let mut out = String::with_capacity(raw.len());
    for &b in raw {
        // Printable ASCII except the separator; IDNs arrive punycoded.
        if !(0x21..=0x7e).contains(&b) || b == b'.' {
            return Err(NameError::InvalidByte(b));
        }
        out.push(b.to_ascii_lowercase() as char);
    }
    Ok(out)
}

impl FromStr for DomainName {
    type Err = NameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.strip_suffix('.').unwrap_or(s);
        if s.is_empty() {
            return Err(NameError::Root);
        }
        let labels: Vec<&str> = s.split('.').collect();
        Self::from_wire_labels(&labels)
    }
}

impl Ord for DomainName {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dotted_bytes().cmp(other.dotted_bytes())
    }
}

impl PartialOrd for DomainName {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for DomainName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, label) in self.labels.iter().rev().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            f.write_str(label)?;
        }
        Ok(())
    }
}

impl fmt::Debug for DomainName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DomainName({self})")
    }
}
