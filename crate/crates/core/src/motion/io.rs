use std::path::Path;

use crate::binio::{push_f32s, push_u32, read_file, write_atomic, Reader};
use crate::error::{CoreError, Result};

use super::{MotionSequence, Skeleton};

const MAGIC: &[u8; 4] = b"MOTN";
const VERSION: u32 = 1;

pub fn encode_motion(m: &MotionSequence) -> Vec<u8> {
    let mut buf = Vec::with_capacity(24 + m.data().len() * 4);
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, VERSION);
    push_u32(&mut buf, m.frame_count() as u32);
    push_u32(&mut buf, m.joint_count() as u32);
    buf.extend_from_slice(&m.fps().to_le_bytes());
    push_u32(&mut buf, 0);
    push_f32s(&mut buf, m.data());
    buf
}

/// Parses `.motn` bytes; `path` is only used in error messages.
pub fn decode_motion(bytes: &[u8], path: &Path) -> Result<MotionSequence> {
    let mut r = Reader::new(bytes, path);
    r.magic(MAGIC)?;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.error(4, format!("unsupported version {version}")));
    }
    let frames = r.u32("frame count")? as usize;
    let joints = r.u32("joint count")? as usize;
    let fps = r.f32("fps")?;
    let _reserved = r.u32("reserved")?;
    let header_end = r.offset();
    let data = r.payload(frames * joints * 3, &format!("T={frames}, J={joints}"))?;
    let skeleton = Skeleton::for_joint_count(joints);
    MotionSequence::new(data, frames, joints, fps, skeleton.id).map_err(|e| {
        r.error(header_end, e.to_string())
    })
}

pub fn read_motion(path: &Path) -> Result<MotionSequence> {
    decode_motion(&read_file(path)?, path)
}

pub fn write_motion(path: &Path, m: &MotionSequence) -> Result<()> {
    write_atomic(path, &encode_motion(m))
}

pub fn read_beats(path: &Path) -> Result<Vec<usize>> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|source| CoreError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_beats(path: &Path, beats: &[usize]) -> Result<()> {
    let text = serde_json::to_string(beats).expect("beat list serializes");
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MotionSequence {
        let data: Vec<f32> = (0..4 * 8 * 3).map(|v| (v as f32 * 0.37).sin()).collect();
        MotionSequence::new(data, 4, 8, 60.0, "mini8").unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.motn");
        let m = sample();
        write_motion(&path, &m).unwrap();
        assert_eq!(read_motion(&path).unwrap(), m);
        assert_eq!(encode_motion(&m).len(), 24 + 4 * 8 * 3 * 4);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let bytes = encode_motion(&sample());
        let cut = &bytes[..bytes.len() - 6];
        match decode_motion(cut, Path::new("cut.motn")) {
            Err(CoreError::Parse { offset, msg, .. }) => {
                assert_eq!(offset, cut.len());
                assert!(msg.contains("payload"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        match decode_motion(&bytes[..10], Path::new("hdr.motn")) {
            Err(CoreError::Parse { offset, .. }) => assert_eq!(offset, 10),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn joint_count_mismatch_is_an_error() {
        let mut bytes = encode_motion(&sample());
        bytes[12..16].copy_from_slice(&9u32.to_le_bytes());
        let err = decode_motion(&bytes, Path::new("j.motn")).unwrap_err();
        assert!(matches!(err, CoreError::Parse { .. }));
        assert!(err.to_string().contains("J=9"), "{err}");
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_motion(&sample());
        bytes[0] = b'X';
        assert!(matches!(
            decode_motion(&bytes, Path::new("m.motn")),
            Err(CoreError::Parse { offset: 0, .. })
        ));
    }

    #[test]
    fn beats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.json");
        write_beats(&path, &[3, 33, 63]).unwrap();
        assert_eq!(read_beats(&path).unwrap(), vec![3, 33, 63]);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "[3,33,63]");
    }
}
