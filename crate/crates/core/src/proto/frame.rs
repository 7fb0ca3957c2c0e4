//! Length-prefixed JSON frames: a 4-byte big-endian length followed by one
//! message document.

use std::io::{Read, Write};

use super::messages::Message;
use super::ProtoError;

/// Upper bound on a frame body; keeps a corrupt length prefix from
/// allocating gigabytes.
pub const FRAME_MAX: usize = 64 * 1024 * 1024;

pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> Result<(), ProtoError> {
    let body = serde_json::to_vec(msg).expect("message serializes");
    if body.len() > FRAME_MAX {
        return Err(ProtoError::FrameTooLarge(body.len()));
    }
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Message, ProtoError> {
    let mut len_buf = [0u8; 4];
    read_exact_at(r, &mut len_buf, 0)?;
    let len = u32::from_be_bytes(len_buf) as usize;
    if len > FRAME_MAX {
        return Err(ProtoError::FrameTooLarge(len));
    }
    let mut body = vec![0u8; len];
    read_exact_at(r, &mut body, 4)?;
    serde_json::from_slice(&body).map_err(|e| ProtoError::Malformed {
        offset: 4 + e.column().saturating_sub(1),
        reason: e.to_string(),
    })
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: usize) -> Result<(), ProtoError> {
    let mut read = 0;
    while read < buf.len() {
        match r.read(&mut buf[read..]) {
            Ok(0) => {
                return Err(ProtoError::Malformed {
                    offset: offset + read,
                    reason: "truncated frame".into(),
                })
            }
            Ok(n) => read += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_frame_is_an_error_not_a_panic() {
        let m = Message::NoWork;
        let mut buf = Vec::new();
        write_frame(&mut buf, &m).unwrap();
        for cut in 0..buf.len() {
            let err = read_frame(&mut &buf[..cut]);
            assert!(err.is_err(), "cut at {cut}");
        }
        assert_eq!(read_frame(&mut buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn oversized_length_prefix_rejected() {
        let mut buf = (u32::MAX).to_be_bytes().to_vec();
        buf.extend_from_slice(b"junk");
        assert!(matches!(read_frame(&mut buf.as_slice()), Err(ProtoError::FrameTooLarge(_))));
    }

    #[test]
    fn malformed_body_reports_offset() {
        let body = b"{not json";
        let mut buf = (body.len() as u32).to_be_bytes().to_vec();
        buf.extend_from_slice(body);
        match read_frame(&mut buf.as_slice()) {
            Err(ProtoError::Malformed { offset, .. }) => assert!(offset >= 4),
            other => panic!("expected malformed, got {other:?}"),
        }
    }
}
