//! Wire protocol for out-of-process denoiser backends.
//!
//! Every message is a frame: a 4-byte big-endian payload length followed by
//! that many bytes of UTF-8 JSON. The client opens with a hello carrying the
//! protocol version and the backend must echo it before any denoise traffic.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{AttentionStack, DenoiserOutput, DiffusionError, LatentGrid, TokenId};

pub const PROTOCOL_VERSION: u32 = 1;

/// Upper bound on a single frame; anything larger is treated as a corrupt
/// length prefix rather than a real message.
pub const MAX_FRAME_LEN: u32 = 64 * 1024 * 1024;

/// Client-to-backend messages.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Hello { version: u32 },
    Denoise { t: usize, shape: [usize; 3], z: Vec<f64>, tokens: Vec<TokenId> },
    Shutdown,
}

/// Successful denoise payload. Attention keys are decimal token ids.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DenoisePayload {
    pub eps: Vec<f64>,
    pub attention: BTreeMap<String, Vec<f64>>,
}

/// Backend-to-client messages, distinguished by their fields.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Response {
    Error { error: String },
    Hello { op: String, version: u32 },
    Denoise(DenoisePayload),
}

impl Request {
    pub fn to_frame(&self) -> Vec<u8> {
        let payload = serde_json::to_vec(self).expect("requests always serialize");
        encode_frame(&payload)
    }
}

pub fn encode_frame(payload: &[u8]) -> Vec<u8> {
    let len = u32::try_from(payload.len()).expect("frame fits in u32");
    let mut out = Vec::with_capacity(4 + payload.len());
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(payload);
    out
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> std::io::Result<()> {
    w.write_all(&encode_frame(payload))?;
    w.flush()
}

/// Reads frames while tracking the absolute stream offset, so truncation can
/// be reported at an exact byte position.
#[derive(Debug)]
pub struct FrameReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    /// Bytes consumed so far.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    /// Reads exactly `buf.len()` bytes, returning how many arrived before
    /// end of stream.
    fn fill(&mut self, buf: &mut [u8]) -> Result<usize, DiffusionError> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => break,
                Ok(n) => {
                    got += n;
                    self.offset += n as u64;
                }
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(DiffusionError::Io(e)),
            }
        }
        Ok(got)
    }

    /// Next frame payload, or `None` on a clean end of stream at a frame
    /// boundary. Truncation inside a frame is a protocol error carrying the
    /// offset where the stream ended.
    pub fn read_frame(&mut self) -> Result<Option<Vec<u8>>, DiffusionError> {
        let mut len_buf = [0u8; 4];
        let got = self.fill(&mut len_buf)?;
        if got == 0 {
            return Ok(None);
        }
        if got < 4 {
            return Err(DiffusionError::Protocol {
                offset: Some(self.offset),
                detail: format!("stream ended inside a frame length prefix ({got} of 4 bytes)"),
            });
        }
        let len = u32::from_be_bytes(len_buf);
        if len > MAX_FRAME_LEN {
            return Err(DiffusionError::Protocol {
                offset: Some(self.offset),
                detail: format!("frame length {len} exceeds limit {MAX_FRAME_LEN}"),
            });
        }
        let mut payload = vec![0u8; len as usize];
        let got = self.fill(&mut payload)?;
        if got < payload.len() {
            return Err(DiffusionError::Protocol {
                offset: Some(self.offset),
                detail: format!("stream ended inside a frame payload ({got} of {len} bytes)"),
            });
        }
        Ok(Some(payload))
    }
}

/// Decodes one backend payload into a typed response.
pub fn parse_response(payload: &[u8]) -> Result<Response, DiffusionError> {
    serde_json::from_slice(payload).map_err(|e| DiffusionError::Protocol {
        offset: None,
        detail: format!(
            "unparseable response: {e} (payload starts {:?})",
            String::from_utf8_lossy(&payload[..payload.len().min(80)])
        ),
    })
}

impl DenoisePayload {
    /// Validates the payload against the request it answers and converts it
    /// into a denoiser output.
    pub fn into_output(
        self,
        shape: (usize, usize, usize),
        step_index: usize,
        tokens: &[TokenId],
    ) -> Result<DenoiserOutput, DiffusionError> {
        let (c, h, w) = shape;
        let eps = LatentGrid::from_data(c, h, w, step_index, self.eps).map_err(|e| {
            DiffusionError::Protocol { offset: None, detail: format!("bad eps field: {e}") }
        })?;
        let mut attention = AttentionStack::new(h, w);
        for (key, map) in self.attention {
            let token: TokenId = key.parse().map_err(|_| DiffusionError::Protocol {
                offset: None,
                detail: format!("attention key {key:?} is not a token id"),
            })?;
            attention.insert(token, map).map_err(|e| DiffusionError::Protocol {
                offset: None,
                detail: format!("bad attention map for token {token}: {e}"),
            })?;
        }
        for &t in tokens {
            if attention.get(t).is_none() {
                return Err(DiffusionError::Protocol {
                    offset: None,
                    detail: format!("response is missing attention for token {t}"),
                });
            }
        }
        Ok(DenoiserOutput { eps, attention })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn frame_roundtrip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"hello").unwrap();
        write_frame(&mut buf, b"").unwrap();
        write_frame(&mut buf, b"world").unwrap();
        let mut r = FrameReader::new(Cursor::new(buf));
        assert_eq!(r.read_frame().unwrap().unwrap(), b"hello");
        assert_eq!(r.read_frame().unwrap().unwrap(), b"");
        assert_eq!(r.read_frame().unwrap().unwrap(), b"world");
        assert!(r.read_frame().unwrap().is_none());
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let mut buf = Vec::new();
        buf.extend_from_slice(&10u32.to_be_bytes());
        buf.extend_from_slice(b"abc");
        let mut r = FrameReader::new(Cursor::new(buf));
        match r.read_frame() {
            Err(DiffusionError::Protocol { offset: Some(7), .. }) => {}
            other => panic!("expected protocol error at byte 7, got {other:?}"),
        }
    }

    #[test]
    fn truncated_length_prefix_reports_offset() {
        let mut r = FrameReader::new(Cursor::new(vec![0u8, 0]));
        match r.read_frame() {
            Err(DiffusionError::Protocol { offset: Some(2), .. }) => {}
            other => panic!("expected protocol error at byte 2, got {other:?}"),
        }
    }

    #[test]
    fn oversized_frame_rejected() {
        let mut buf = Vec::new();
        buf.extend_from_slice(&(MAX_FRAME_LEN + 1).to_be_bytes());
        let mut r = FrameReader::new(Cursor::new(buf));
        assert!(matches!(r.read_frame(), Err(DiffusionError::Protocol { .. })));
    }

    #[test]
    fn request_json_shape() {
        let req = Request::Denoise { t: 3, shape: [1, 2, 2], z: vec![0.5; 4], tokens: vec![7] };
        let v: serde_json::Value = serde_json::from_slice(
            &serde_json::to_vec(&req).unwrap(),
        )
        .unwrap();
        assert_eq!(v["op"], "denoise");
        assert_eq!(v["t"], 3);
        assert_eq!(v["shape"], serde_json::json!([1, 2, 2]));
        assert_eq!(v["tokens"], serde_json::json!([7]));

        let hello: serde_json::Value =
            serde_json::from_slice(&serde_json::to_vec(&Request::Hello { version: 1 }).unwrap())
                .unwrap();
        assert_eq!(hello["op"], "hello");
        assert_eq!(hello["version"], 1);
    }

    #[test]
    fn response_dispatch() {
        match parse_response(br#"{"error":"boom"}"#).unwrap() {
            Response::Error { error } => assert_eq!(error, "boom"),
            other => panic!("{other:?}"),
        }
        match parse_response(br#"{"op":"hello","version":1}"#).unwrap() {
            Response::Hello { version, .. } => assert_eq!(version, 1),
            other => panic!("{other:?}"),
        }
        match parse_response(br#"{"eps":[0.0],"attention":{}}"#).unwrap() {
            Response::Denoise(p) => assert_eq!(p.eps.len(), 1),
            other => panic!("{other:?}"),
        }
        assert!(parse_response(b"not json").is_err());
    }

    #[test]
    fn payload_validation() {
        let ok = DenoisePayload {
            eps: vec![0.0; 4],
            attention: BTreeMap::from([("7".into(), vec![0.0; 4])]),
        };
        assert!(ok.clone().into_output((1, 2, 2), 5, &[7]).is_ok());

        let short = DenoisePayload { eps: vec![0.0; 3], attention: BTreeMap::new() };
        assert!(short.into_output((1, 2, 2), 5, &[]).is_err());

        let missing = DenoisePayload { eps: vec![0.0; 4], attention: BTreeMap::new() };
        assert!(missing.into_output((1, 2, 2), 5, &[7]).is_err());

        let bad_key = DenoisePayload {
            eps: vec![0.0; 4],
            attention: BTreeMap::from([("seven".into(), vec![0.0; 4])]),
        };
        assert!(bad_key.into_output((1, 2, 2), 5, &[]).is_err());
    }
}
