//! Frame layout: 4-byte big-endian length of everything after it, 1-byte
//! kind, then a kind-specific payload. Strings are a 2-byte big-endian length
//! followed by UTF-8 bytes; a PUBLISH body runs to the end of the frame.

use bytes::{BufMut, Bytes, BytesMut};
use thiserror::Error;

use crate::topic::{TopicError, TopicFilter, TopicName};

pub const HEADER_LEN: usize = 4;
pub const MAX_STRING_LEN: usize = u16::MAX as usize;
pub const MAX_BODY_LEN: usize = 1 << 24;
/// Largest legal value of the length prefix (a PUBLISH with maximal topic and body).
pub const MAX_FRAME_LEN: usize = 1 + 2 + MAX_STRING_LEN + MAX_BODY_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameKind {
    Connect = 1,
    ConnAck = 2,
    Subscribe = 3,
    SubAck = 4,
    Publish = 5,
    PingReq = 6,
    PingResp = 7,
    Disconnect = 8,
}

impl TryFrom<u8> for FrameKind {
    type Error = DecodeError;

    fn try_from(b: u8) -> Result<Self, DecodeError> {
        Ok(match b {
            1 => Self::Connect,
            2 => Self::ConnAck,
            3 => Self::Subscribe,
            4 => Self::SubAck,
            5 => Self::Publish,
            6 => Self::PingReq,
            7 => Self::PingResp,
            8 => Self::Disconnect,
            other => return Err(DecodeError::BadKind(other)),
        })
    }
}

/// CONNACK return codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConnAckCode {
    Accepted,
    /// Another live session already uses the client id.
    IdentifierInUse,
    /// The client id is empty.
    IdentifierRejected,
    Other(u8),
}

impl From<u8> for ConnAckCode {
    fn from(b: u8) -> Self {
        match b {
            0 => Self::Accepted,
            1 => Self::IdentifierInUse,
            2 => Self::IdentifierRejected,
            other => Self::Other(other),
        }
    }
}

impl From<ConnAckCode> for u8 {
    fn from(c: ConnAckCode) -> u8 {
        match c {
            ConnAckCode::Accepted => 0,
            ConnAckCode::IdentifierInUse => 1,
            ConnAckCode::IdentifierRejected => 2,
            ConnAckCode::Other(b) => b,
        }
    }
}

pub const SUBACK_GRANTED: u8 = 0x00;
pub const SUBACK_FAILURE: u8 = 0x80;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Connect { client_id: String },
    ConnAck { code: ConnAckCode },
    Subscribe { filter: TopicFilter },
    SubAck { code: u8 },
    Publish { topic: TopicName, body: Bytes },
    PingReq,
    PingResp,
    Disconnect,
}

impl Frame {
    pub fn kind(&self) -> FrameKind {
        match self {
            Frame::Connect { .. } => FrameKind::Connect,
            Frame::ConnAck { .. } => FrameKind::ConnAck,
            Frame::Subscribe { .. } => FrameKind::Subscribe,
            Frame::SubAck { .. } => FrameKind::SubAck,
            Frame::Publish { .. } => FrameKind::Publish,
            Frame::PingReq => FrameKind::PingReq,
            Frame::PingResp => FrameKind::PingResp,
            Frame::Disconnect => FrameKind::Disconnect,
        }
    }

    pub fn publish(topic: TopicName, body: impl Into<Bytes>) -> Self {
        Frame::Publish {
            topic,
            body: body.into(),
        }
    }

    /// Value of the length prefix for this frame.
    pub fn encoded_len(&self) -> usize {
        1 + match self {
            Frame::Connect { client_id } => 2 + client_id.len(),
            Frame::Subscribe { filter } => 2 + filter.as_str().len(),
            Frame::Publish { topic, body } => 2 + topic.as_str().len() + body.len(),
            Frame::ConnAck { .. } | Frame::SubAck { .. } => 1,
            Frame::PingReq | Frame::PingResp | Frame::Disconnect => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("{field} is {len} bytes, limit is {max}")]
    Oversize {
        field: &'static str,
        len: usize,
        max: usize,
    },
}

/// Structured decode failures; [`DecodeError::code`] gives the stable name.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("TRUNCATED: need more bytes")]
    Truncated,
    #[error("BAD_KIND: unknown frame kind {0}")]
    BadKind(u8),
    #[error("BAD_UTF8: string field is not valid UTF-8")]
    BadUtf8,
    #[error("LENGTH_MISMATCH: {0}")]
    LengthMismatch(String),
    #[error("BAD_TOPIC: {0}")]
    BadTopic(#[from] TopicError),
}

impl DecodeError {
    pub fn code(&self) -> &'static str {
        match self {
            DecodeError::Truncated => "TRUNCATED",
            DecodeError::BadKind(_) => "BAD_KIND",
            DecodeError::BadUtf8 => "BAD_UTF8",
            DecodeError::LengthMismatch(_) => "LENGTH_MISMATCH",
            DecodeError::BadTopic(_) => "BAD_TOPIC",
        }
    }
}

fn check_len(field: &'static str, len: usize, max: usize) -> Result<(), EncodeError> {
    if len > max {
        return Err(EncodeError::Oversize { field, len, max });
    }
    Ok(())
}

/// Appends the encoding of `frame` to `dst`.
pub fn encode_into(frame: &Frame, dst: &mut BytesMut) -> Result<(), EncodeError> {
    match frame {
        Frame::Connect { client_id } => check_len("client id", client_id.len(), MAX_STRING_LEN)?,
        Frame::Publish { body, .. } => check_len("body", body.len(), MAX_BODY_LEN)?,
        _ => {}
    }
    let len = frame.encoded_len();
    dst.reserve(HEADER_LEN + len);
    dst.put_u32(len as u32);
    dst.put_u8(frame.kind() as u8);
    match frame {
        Frame::Connect { client_id } => put_string(dst, client_id),
        Frame::Subscribe { filter } => put_string(dst, filter.as_str()),
        Frame::Publish { topic, body } => {
            put_string(dst, topic.as_str());
            dst.put_slice(body);
        }
        Frame::ConnAck { code } => dst.put_u8((*code).into()),
        Frame::SubAck { code } => dst.put_u8(*code),
        Frame::PingReq | Frame::PingResp | Frame::Disconnect => {}
    }
    Ok(())
}

fn put_string(dst: &mut BytesMut, s: &str) {
    dst.put_u16(s.len() as u16);
    dst.put_slice(s.as_bytes());
}

pub fn encode_frame(frame: &Frame) -> Result<Bytes, EncodeError> {
    let mut buf = BytesMut::new();
    encode_into(frame, &mut buf)?;
    Ok(buf.freeze())
}

/// Validates a length prefix. `Ok(None)` means the header itself is incomplete.
pub(crate) fn declared_len(bytes: &[u8]) -> Result<Option<usize>, DecodeError> {
    let Some(header) = bytes.get(..HEADER_LEN) else {
        return Ok(None);
    };
    let len = u32::from_be_bytes(header.try_into().expect("4-byte header")) as usize;
    if len == 0 {
        return Err(DecodeError::LengthMismatch("length prefix is zero".into()));
    }
    if len > MAX_FRAME_LEN {
        return Err(DecodeError::LengthMismatch(format!(
            "declared length {len} exceeds maximum {MAX_FRAME_LEN}"
        )));
    }
    Ok(Some(len))
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, DecodeError> {
    let len = declared_len(bytes)?.ok_or(DecodeError::Truncated)?;
    let available = bytes.len() - HEADER_LEN;
    if available < len {
        return Err(DecodeError::Truncated);
    }
    if available > len {
        return Err(DecodeError::LengthMismatch(format!(
            "declared {len} bytes, found {available}"
        )));
    }
    decode_body(&bytes[HEADER_LEN..])
}

/// Decodes the part of a frame after the length prefix (kind byte onward).
pub(crate) fn decode_body(body: &[u8]) -> Result<Frame, DecodeError> {
    let (&kind, mut rest) = body
        .split_first()
        .ok_or_else(|| DecodeError::LengthMismatch("missing kind byte".into()))?;
    let kind = FrameKind::try_from(kind)?;
    let frame = match kind {
        FrameKind::Connect => Frame::Connect {
            client_id: take_string(&mut rest)?,
        },
        FrameKind::Subscribe => Frame::Subscribe {
            filter: TopicFilter::new(take_string(&mut rest)?)?,
        },
        FrameKind::Publish => {
            let topic = TopicName::new(take_string(&mut rest)?)?;
            if rest.len() > MAX_BODY_LEN {
                return Err(DecodeError::LengthMismatch("body exceeds 2^24 bytes".into()));
            }
            let body = Bytes::copy_from_slice(rest);
            rest = &[];
            Frame::Publish { topic, body }
        }
        FrameKind::ConnAck => Frame::ConnAck {
            code: take_u8(&mut rest)?.into(),
        },
        FrameKind::SubAck => Frame::SubAck {
            code: take_u8(&mut rest)?,
        },
        FrameKind::PingReq => Frame::PingReq,
        FrameKind::PingResp => Frame::PingResp,
        FrameKind::Disconnect => Frame::Disconnect,
    };
    if !rest.is_empty() {
        return Err(DecodeError::LengthMismatch(format!(
            "{} trailing bytes after {kind:?} payload",
            rest.len()
        )));
    }
    Ok(frame)
}

fn take_u8(buf: &mut &[u8]) -> Result<u8, DecodeError> {
    let (&b, rest) = buf
        .split_first()
        .ok_or_else(|| DecodeError::LengthMismatch("payload too short".into()))?;
    *buf = rest;
    Ok(b)
}

fn take_string(buf: &mut &[u8]) -> Result<String, DecodeError> {
    if buf.len() < 2 {
        return Err(DecodeError::LengthMismatch("missing string length".into()));
    }
    let len = u16::from_be_bytes([buf[0], buf[1]]) as usize;
    let Some(raw) = buf.get(2..2 + len) else {
        return Err(DecodeError::LengthMismatch(format!(
            "string length {len} exceeds frame"
        )));
    };
    let s = std::str::from_utf8(raw)
        .map_err(|_| DecodeError::BadUtf8)?
        .to_string();
    *buf = &buf[2 + len..];
    Ok(s)
}
