//! Wire format shared by the broker, devices and backend. See `protocol.md`
//! at the repository root for the byte layouts with worked examples.

pub mod codec;
pub mod frame;
pub mod topic;

pub use codec::{CodecError, FrameCodec};
pub use frame::{
    decode_frame, encode_frame, ConnAckCode, DecodeError, EncodeError, Frame, FrameKind,
    SUBACK_FAILURE, SUBACK_GRANTED,
};
pub use topic::{topic_matches, TopicError, TopicFilter, TopicName};
