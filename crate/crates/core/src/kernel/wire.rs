//! Signed multipart message codec.
//!
//! A message on the wire is
//! `[identities..., "<IDS|MSG>", signature, header, parent_header, metadata, content, buffers...]`
//! where the signature is the lowercase hex HMAC-SHA256 of the four JSON
//! frames concatenated, keyed with the connection key. An empty key
//! disables signing and the signature frame is empty.

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::Sha256;
use thiserror::Error;

pub const DELIMITER: &[u8] = b"<IDS|MSG>";
pub const PROTOCOL_VERSION: &str = "5.3";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("signature mismatch")]
    SignatureMismatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub msg_id: String,
    pub msg_type: String,
    pub session: String,
    pub username: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Header {
    pub fn new(msg_type: &str, session: &str, username: &str) -> Self {
        Self {
            msg_id: uuid::Uuid::new_v4().to_string(),
            msg_type: msg_type.to_string(),
            session: session.to_string(),
            username: username.to_string(),
            version: PROTOCOL_VERSION.to_string(),
            date: Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true)),
            extra: Map::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WireMessage {
    pub identities: Vec<Vec<u8>>,
    pub header: Header,
    /// `None` is sent as `{}`.
    pub parent_header: Option<Header>,
    pub metadata: Map<String, Value>,
    pub content: Value,
}

impl WireMessage {
    pub fn new(header: Header, content: Value) -> Self {
        Self {
            identities: Vec::new(),
            header,
            parent_header: None,
            metadata: Map::new(),
            content,
        }
    }

    /// A message answering `parent`, routed back to its sender.
    pub fn reply_to(parent: &WireMessage, msg_type: &str, content: Value) -> Self {
        let header = Header::new(msg_type, &parent.header.session, &parent.header.username);
        Self {
            identities: parent.identities.clone(),
            header,
            parent_header: Some(parent.header.clone()),
            metadata: Map::new(),
            content,
        }
    }

    pub fn msg_type(&self) -> &str {
        &self.header.msg_type
    }

    pub fn parent_id(&self) -> Option<&str> {
        self.parent_header.as_ref().map(|h| h.msg_id.as_str())
    }

    pub fn encode(&self, key: &[u8]) -> Result<Vec<Vec<u8>>, WireError> {
        let header = to_json(&self.header)?;
        let parent = match &self.parent_header {
            Some(h) => to_json(h)?,
            None => b"{}".to_vec(),
        };
        let metadata = to_json(&self.metadata)?;
        let content = to_json(&self.content)?;
        let signature = sign_frames(key, [&header[..], &parent, &metadata, &content]);
        let mut frames = self.identities.clone();
        frames.push(DELIMITER.to_vec());
        frames.push(signature.into_bytes());
        frames.extend([header, parent, metadata, content]);
        Ok(frames)
    }

    /// Decodes and, when `key` is non-empty, authenticates a frame list.
    ///
    /// The signature is checked before any JSON is parsed.
    pub fn decode(frames: &[Vec<u8>], key: &[u8]) -> Result<Self, WireError> {
        let delim = frames
            .iter()
            .position(|f| f == DELIMITER)
            .ok_or_else(|| WireError::Malformed("missing <IDS|MSG> delimiter".into()))?;
        let rest = &frames[delim + 1..];
        if rest.len() < 5 {
            return Err(WireError::Malformed(format!(
                "expected signature and 4 frames after the delimiter, got {}",
                rest.len()
            )));
        }
        let (signature, body) = (&rest[0], &rest[1..5]);
        if !key.is_empty()
            && !verify_signature(signature, key, [&body[0][..], &body[1], &body[2], &body[3]])
        {
            return Err(WireError::SignatureMismatch);
        }
        let parse = |name: &str, bytes: &[u8]| -> Result<Value, WireError> {
            serde_json::from_slice(bytes).map_err(|e| WireError::Malformed(format!("{name}: {e}")))
        };
        let header: Header = serde_json::from_value(parse("header", &body[0])?)
            .map_err(|e| WireError::Malformed(format!("header: {e}")))?;
        let parent_header = match parse("parent_header", &body[1])? {
            Value::Object(m) if m.is_empty() => None,
            v => Some(
                serde_json::from_value(v)
                    .map_err(|e| WireError::Malformed(format!("parent_header: {e}")))?,
            ),
        };
        let metadata = match parse("metadata", &body[2])? {
            Value::Object(m) => m,
            _ => return Err(WireError::Malformed("metadata must be an object".into())),
        };
        let content = parse("content", &body[3])?;
        Ok(Self {
            identities: frames[..delim].to_vec(),
            header,
            parent_header,
            metadata,
            content,
        })
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, WireError> {
    serde_json::to_vec(value).map_err(|e| WireError::Malformed(e.to_string()))
}

type HmacSha256 = Hmac<Sha256>;

/// Lowercase hex HMAC-SHA256 over the concatenated frames; `""` for an
/// empty key.
pub fn sign_frames<'a>(key: &[u8], frames: impl IntoIterator<Item = &'a [u8]>) -> String {
    if key.is_empty() {
        return String::new();
    }
    let mut mac = <HmacSha256 as KeyInit>::new_from_slice(key).expect("HMAC accepts any key length");
    for frame in frames {
        mac.update(frame);
    }
    hex::encode(mac.finalize().into_bytes())
}

/// Constant-time comparison against the expected lowercase hex digest.
pub fn verify_signature<'a>(
    signature: &[u8],
    key: &[u8],
    frames: impl IntoIterator<Item = &'a [u8]>,
) -> bool {
    let expected = sign_frames(key, frames);
    let expected = expected.as_bytes();
    if expected.len() != signature.len() {
        return false;
    }
    expected
        .iter()
        .zip(signature)
        .fold(0u8, |acc, (a, b)| acc | (a ^ b))
        == 0
}
