//! Binary framing for learner/worker messages.
//!
//! Every frame is `[length: u32 BE][tag: u8][round: u32 BE][worker: u32 BE]
//! [payload]`, where `length` counts the bytes after the length field itself
//! (so the minimal frame declares 9). Vector payloads are a `u32` big-endian
//! element count followed by that many IEEE-754 doubles in little-endian
//! byte order. Round trips are bit-exact: `decode(encode(m)) == m` for every
//! valid message.

use std::io::{self, Read, Write};

use thiserror::Error;

/// Fixed bytes after the length prefix: tag + round + worker.
const HEADER: usize = 9;

/// Decoding failures, each distinguishable so tests (and peers) can tell
/// them apart.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated frame: needed {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("unknown message tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
}

/// Message kinds, one byte each on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Tag {
    Hello = 0x01,
    Assign = 0x02,
    Params = 0x03,
    Grad = 0x04,
    Done = 0x05,
    Error = 0x06,
}

impl Tag {
    fn from_byte(b: u8) -> Result<Tag, WireError> {
        match b {
            0x01 => Ok(Tag::Hello),
            0x02 => Ok(Tag::Assign),
            0x03 => Ok(Tag::Params),
            0x04 => Ok(Tag::Grad),
            0x05 => Ok(Tag::Done),
            0x06 => Ok(Tag::Error),
            other => Err(WireError::UnknownTag(other)),
        }
    }
}

/// One protocol message. `round` and `worker` ride in every frame even when
/// a kind does not need them (then they are zero by convention).
#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub tag: Tag,
    pub round: u32,
    pub worker: u32,
    pub payload: Vec<u8>,
}

impl WireMessage {
    /// Worker's first message after connecting.
    pub fn hello() -> Self {
        WireMessage {
            tag: Tag::Hello,
            round: 0,
            worker: 0,
            payload: Vec::new(),
        }
    }

    /// Learner's handshake reply carrying the assigned worker id.
    pub fn assign(worker: u32) -> Self {
        WireMessage {
            tag: Tag::Assign,
            round: 0,
            worker,
            payload: Vec::new(),
        }
    }

    /// Broadcast of the round's parameter vector.
    pub fn params(round: u32, theta: &[f64]) -> Self {
        WireMessage {
            tag: Tag::Params,
            round,
            worker: 0,
            payload: encode_vector(theta),
        }
    }

    /// A worker's gradient report for the echoed round.
    pub fn grad(round: u32, worker: u32, gradient: &[f64]) -> Self {
        WireMessage {
            tag: Tag::Grad,
            round,
            worker,
            payload: encode_vector(gradient),
        }
    }

    /// End of training; carries the final parameter vector.
    pub fn done(round: u32, theta: &[f64]) -> Self {
        WireMessage {
            tag: Tag::Done,
            round,
            worker: 0,
            payload: encode_vector(theta),
        }
    }

    /// Fatal protocol error, payload is UTF-8 text.
    pub fn error(text: &str) -> Self {
        WireMessage {
            tag: Tag::Error,
            round: 0,
            worker: 0,
            payload: text.as_bytes().to_vec(),
        }
    }

    /// Parse this message's payload as a vector.
    pub fn vector(&self) -> Result<Vec<f64>, WireError> {
        decode_vector(&self.payload)
    }
}

/// Serialize a vector payload: count then little-endian doubles.
pub fn encode_vector(v: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 8 * v.len());
    out.extend_from_slice(&(v.len() as u32).to_be_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Parse a vector payload, requiring the byte count to match the element
/// count exactly.
pub fn decode_vector(bytes: &[u8]) -> Result<Vec<f64>, WireError> {
    if bytes.len() < 4 {
        return Err(WireError::Truncated {
            needed: 4,
            got: bytes.len(),
        });
    }
    let count = u32::from_be_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let body = &bytes[4..];
    if body.len() != 8 * count {
        return Err(WireError::LengthMismatch(format!(
            "vector declares {count} elements ({} bytes) but carries {}",
            8 * count,
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Serialize a full frame, length prefix included.
pub fn encode_message(msg: &WireMessage) -> Vec<u8> {
    let body_len = HEADER + msg.payload.len();
    let mut out = Vec::with_capacity(4 + body_len);
    out.extend_from_slice(&(body_len as u32).to_be_bytes());
    out.push(msg.tag as u8);
    out.extend_from_slice(&msg.round.to_be_bytes());
    out.extend_from_slice(&msg.worker.to_be_bytes());
    out.extend_from_slice(&msg.payload);
    out
}

/// Parse exactly one frame from `bytes`; trailing bytes are an error, so a
/// frame is always consumed whole.
pub fn decode_message(bytes: &[u8]) -> Result<WireMessage, WireError> {
    if bytes.len() < 4 {
        return Err(WireError::Truncated {
            needed: 4,
            got: bytes.len(),
        });
    }
    let declared = u32::from_be_bytes(bytes[0..4].try_into().unwrap()) as usize;
    if declared < HEADER {
        return Err(WireError::LengthMismatch(format!(
            "declared length {declared} cannot hold the {HEADER}-byte header"
        )));
    }
    let body = &bytes[4..];
    if body.len() < declared {
        return Err(WireError::Truncated {
            needed: declared,
            got: body.len(),
        });
    }
    if body.len() > declared {
        return Err(WireError::LengthMismatch(format!(
            "frame declares {declared} bytes but {} follow the prefix",
            body.len()
        )));
    }
    let tag = Tag::from_byte(body[0])?;
    let round = u32::from_be_bytes(body[1..5].try_into().unwrap());
    let worker = u32::from_be_bytes(body[5..9].try_into().unwrap());
    Ok(WireMessage {
        tag,
        round,
        worker,
        payload: body[HEADER..].to_vec(),
    })
}

/// Write one frame to a stream.
pub fn write_frame(w: &mut impl Write, msg: &WireMessage) -> io::Result<()> {
    w.write_all(&encode_message(msg))?;
    w.flush()
}

/// Read one frame from a stream. `Ok(None)` means the peer closed the
/// connection cleanly between frames.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Result<WireMessage, WireError>>> {
    let mut len_buf = [0u8; 4];
    match r.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let declared = u32::from_be_bytes(len_buf) as usize;
    if declared < HEADER {
        return Ok(Some(Err(WireError::LengthMismatch(format!(
            "declared length {declared} cannot hold the {HEADER}-byte header"
        )))));
    }
    // Cap frames at 64 MiB: a corrupt length prefix should not look like an
    // allocation request.
    if declared > (64 << 20) {
        return Ok(Some(Err(WireError::LengthMismatch(format!(
            "declared length {declared} exceeds the frame cap"
        )))));
    }
    let mut body = vec![0u8; declared];
    r.read_exact(&mut body)?;
    let mut frame = Vec::with_capacity(4 + declared);
    frame.extend_from_slice(&len_buf);
    frame.extend_from_slice(&body);
    Ok(Some(decode_message(&frame)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use rand::Rng;

    #[test]
    fn minimal_params_frame_round_trips() {
        let msg = WireMessage::params(0, &[]);
        let bytes = encode_message(&msg);
        // length prefix + header + 4-byte empty-vector count
        assert_eq!(bytes.len(), 4 + 9 + 4);
        assert_eq!(decode_message(&bytes).unwrap(), msg);
    }

    #[test]
    fn grad_frame_round_trips_bit_exactly() {
        let msg = WireMessage::grad(7, 3, &[1.5, -2.0]);
        let back = decode_message(&encode_message(&msg)).unwrap();
        assert_eq!(back, msg);
        assert_eq!(back.vector().unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn truncated_frame_is_reported_as_such() {
        let msg = WireMessage::assign(2);
        let mut bytes = encode_message(&msg);
        // Declare 10 body bytes but provide only 8.
        bytes[0..4].copy_from_slice(&10u32.to_be_bytes());
        bytes.truncate(4 + 8);
        assert_eq!(
            decode_message(&bytes),
            Err(WireError::Truncated { needed: 10, got: 8 })
        );
    }

    #[test]
    fn unknown_tag_is_its_own_error() {
        let mut bytes = encode_message(&WireMessage::hello());
        bytes[4] = 0x7f;
        assert_eq!(decode_message(&bytes), Err(WireError::UnknownTag(0x7f)));
    }

    #[test]
    fn bad_lengths_are_their_own_error() {
        // Declared length too small for the header.
        let mut bytes = encode_message(&WireMessage::hello());
        bytes[0..4].copy_from_slice(&5u32.to_be_bytes());
        bytes.truncate(4 + 5);
        assert!(matches!(
            decode_message(&bytes),
            Err(WireError::LengthMismatch(_))
        ));
        // Trailing garbage after a complete frame.
        let mut extra = encode_message(&WireMessage::hello());
        extra.push(0);
        assert!(matches!(
            decode_message(&extra),
            Err(WireError::LengthMismatch(_))
        ));
        // Vector count inconsistent with the byte count.
        let mut grad = WireMessage::grad(1, 0, &[1.0, 2.0]);
        grad.payload[0..4].copy_from_slice(&3u32.to_be_bytes());
        assert!(matches!(grad.vector(), Err(WireError::LengthMismatch(_))));
    }

    #[test]
    fn special_values_survive_the_trip() {
        let v = [0.0, -0.0, f64::INFINITY, f64::NEG_INFINITY, f64::MIN_POSITIVE, 1e308];
        let back = decode_vector(&encode_vector(&v)).unwrap();
        for (a, b) in v.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn random_corpus_round_trips() {
        // Ten thousand random valid messages survive encode/decode with
        // every bit intact.
        let mut rng = RngStream::new(2024, 0).rng();
        for _ in 0..10_000 {
            let tag = match rng.random_range(0..6) {
                0 => Tag::Hello,
                1 => Tag::Assign,
                2 => Tag::Params,
                3 => Tag::Grad,
                4 => Tag::Done,
                _ => Tag::Error,
            };
            let len = rng.random_range(0..32);
            let payload: Vec<u8> = match tag {
                Tag::Params | Tag::Grad | Tag::Done => {
                    let v: Vec<f64> = (0..len)
                        .map(|_| f64::from_bits(rng.random::<u64>()))
                        .filter(|x| !x.is_nan())
                        .collect();
                    encode_vector(&v)
                }
                _ => (0..len).map(|_| rng.random::<u8>()).collect(),
            };
            let msg = WireMessage {
                tag,
                round: rng.random::<u32>(),
                worker: rng.random::<u32>(),
                payload,
            };
            assert_eq!(decode_message(&encode_message(&msg)), Ok(msg));
        }
    }

    #[test]
    fn frames_stream_back_to_back() {
        let a = WireMessage::params(1, &[0.25, -4.0]);
        let b = WireMessage::grad(1, 6, &[9.0]);
        let mut buf = encode_message(&a);
        buf.extend_from_slice(&encode_message(&b));
        let mut cursor = std::io::Cursor::new(buf);
        assert_eq!(read_frame(&mut cursor).unwrap().unwrap().unwrap(), a);
        assert_eq!(read_frame(&mut cursor).unwrap().unwrap().unwrap(), b);
        assert!(read_frame(&mut cursor).unwrap().is_none(), "clean EOF");
    }
}
