//! Learner/worker communication: a length-prefixed binary wire format and a
//! TCP runtime mirroring the in-process simulator round for round.

pub mod net;
pub mod wire;

pub use net::{
    bind, run_worker, serve_learner, LearnerServer, TransportError, WorkerRun, WorkerSetup,
};
pub use wire::{
    decode_message, decode_vector, encode_message, encode_vector, read_frame, write_frame, Tag,
    WireError, WireMessage,
};
