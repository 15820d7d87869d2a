//! DNS names, record types and the stub-resolver wire codec.

mod name;
mod record;
pub mod wire;

pub use name::{DomainName, NameError, MAX_LABEL_LEN, MAX_NAME_LEN};
pub use record::{RecordAnswer, RecordKey, RecordType, ResourceRecord};
pub use wire::{
    build_error_response, build_formerr, build_response, encode_query, parse_query, parse_response, DnsError,
    DnsResponse, Rcode,
};
