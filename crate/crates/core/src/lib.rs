//! Popularity-list DNS resolution with anonymous vote collection.

pub mod dns;
pub mod list;
pub mod maintenance;
pub mod mixnet;
pub mod protocol;
pub mod resolver;
pub mod sim;
