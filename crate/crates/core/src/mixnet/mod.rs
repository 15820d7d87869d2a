//! Voting mix network: packet crypto, shuffler and server round machines.

pub mod client;
pub mod crypto;
pub mod local;
pub mod misbehavior;
pub mod node;
pub mod packet;
pub mod payload;
pub mod reassembly;
pub mod round;
pub mod server;

pub use client::{client_submit, AckReport, MisbehaviorReport, SentVote, Submission};
pub use crypto::{
    ack_tag, blind, build_path_plan, build_routed_plan, derive_shared, layer_encrypt, next_hash, peel, CryptoError,
    KeyElement, LayerRole, MixPayload, NextHopHash, Scalar, SenderPathPlan, SymKey,
};
pub use misbehavior::MisbehaviorTracker;
pub use node::{MixNode, ShufflerNode};
pub use packet::{decode_batch, encode_batch, BatchError, MixPacket, PACKET_LEN};
pub use payload::{RecordDigest, VotePayload};
pub use reassembly::{tally_payloads, RecordBook, TallyOutcome};
pub use round::{select_shufflers, RoundContext, RoundError, DEFAULT_N_SHUFFLE};
pub use server::{ClientId, Discrepancy, ServerRound, ServerRoundStats};
