//! Reader and writer for the NTU RGB+D `.skeleton` text layout.
//!
//! ```text
//! <frame count>
//! per frame:
//!   <body count>
//!   per body:
//!     <body info: id, clipped edges, hand states, lean, tracking state>
//!     <joint count>
//!     per joint: x y z depthX depthY colorX colorY qw qx qy qz trackingState
//! ```
//!
//! Only the first body of each frame is kept. Frames with no body are
//! dropped, as NTU captures often start with a few empty frames.

use std::fmt::Write as _;
use std::path::Path;

use super::graph::NTU_JOINTS;
use super::SkeletonSequence;
use crate::error::{Error, Result};

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last_line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate().peekable(),
            last_line: 0,
        }
    }

    /// Next non-blank line with its 1-based number.
    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        for (i, line) in self.inner.by_ref() {
            self.last_line = i + 1;
            if !line.trim().is_empty() {
                return Ok((i + 1, line));
            }
        }
        Err(Error::Parse {
            line: self.last_line + 1,
            message: format!("unexpected end of file, expected {what}"),
        })
    }

    fn next_count(&mut self, what: &str) -> Result<(usize, usize)> {
        let (n, line) = self.next_line(what)?;
        let mut fields = line.split_whitespace();
        let value = fields
            .next()
            .and_then(|f| f.parse::<usize>().ok())
            .filter(|_| fields.next().is_none())
            .ok_or_else(|| Error::Parse {
                line: n,
                message: format!("expected {what}, found {:?}", line.trim()),
            })?;
        Ok((n, value))
    }
}

fn parse_joint(n: usize, line: &str) -> Result<[f64; 3]> {
    let mut xyz = [0.0; 3];
    let mut fields = line.split_whitespace();
    for (axis, slot) in xyz.iter_mut().enumerate() {
        *slot = fields
            .next()
            .and_then(|f| f.parse::<f64>().ok())
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse {
                line: n,
                message: format!("joint line needs a finite coordinate in field {}", axis + 1),
            })?;
    }
    Ok(xyz)
}

/// Extracts the action label from an NTU file name such as
/// `S001C001P001R001A011.skeleton`. The returned label is zero-based
/// (`A011` becomes 10).
pub fn label_from_filename(name: &str) -> Option<usize> {
    let stem = Path::new(name).file_stem()?.to_str()?;
    let pos = stem.rfind('A')?;
    let digits = &stem[pos + 1..];
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse::<usize>().ok()?.checked_sub(1)
}

pub fn parse_ntu_skeleton(bytes: &[u8], filename: Option<&str>) -> Result<SkeletonSequence> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1,
        message: "invalid UTF-8".into(),
    })?;
    let mut lines = Lines::new(text);
    let (_, frame_count) = lines.next_count("frame count")?;

    let mut positions = Vec::new();
    let mut kept = 0usize;
    for _ in 0..frame_count {
        let (_, bodies) = lines.next_count("body count")?;
        for body in 0..bodies {
            lines.next_line("body info line")?;
            let (n, joint_count) = lines.next_count("joint count")?;
            if joint_count != NTU_JOINTS {
                return Err(Error::UnsupportedSkeleton {
                    expected: NTU_JOINTS,
                    found: joint_count,
                    line: n,
                });
            }
            for _ in 0..joint_count {
                let (n, line) = lines.next_line("joint line")?;
                let xyz = parse_joint(n, line)?;
                if body == 0 {
                    positions.extend_from_slice(&xyz);
                }
            }
        }
        if bodies > 0 {
            kept += 1;
        }
    }
    if kept == 0 {
        return Err(Error::EmptySample);
    }

    let name = filename.unwrap_or("ntu-sample");
    let label = filename.and_then(label_from_filename).unwrap_or(0);
    let sample_id = Path::new(name)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(name)
        .to_string();
    SkeletonSequence::new(kept, NTU_JOINTS, positions, label, sample_id)
}

pub fn parse_ntu_file(path: &Path) -> Result<SkeletonSequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ntu_skeleton(&bytes, path.file_name().and_then(|s| s.to_str()))
}

/// Writes a single-body `.skeleton` document. Coordinates use the shortest
/// decimal that parses back to the same `f64`; the non-positional fields are
/// filled with zeros and a "tracked" state.
pub fn write_ntu_skeleton(seq: &SkeletonSequence) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", seq.frames());
    for t in 0..seq.frames() {
        out.push_str("1\n");
        out.push_str("72057594037931101 0 1 1 1 1 0 0 0 2\n");
        let _ = writeln!(out, "{}", seq.joints());
        for v in 0..seq.joints() {
            let [x, y, z] = seq.position(t, v);
            let _ = writeln!(out, "{x:?} {y:?} {z:?} 0 0 0 0 0 0 0 0 2");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(frames: usize, joints: usize, coord: impl Fn(usize, usize) -> [f64; 3]) -> String {
        let mut s = format!("{frames}\n");
        for t in 0..frames {
            s.push_str("1\n72057594037931101 0 1 1 1 1 0 0 0 2\n");
            s.push_str(&format!("{joints}\n"));
            for v in 0..joints {
                let [x, y, z] = coord(t, v);
                s.push_str(&format!(
                    "{x} {y} {z} 257.1 192.6 1004.2 540.1 -0.2 0.1 0.9 0.1 2\n"
                ));
            }
        }
        s
    }

    #[test]
    fn single_frame_violates_min_frames() {
        let text = fixture(1, 25, |_, _| [0.0; 3]);
        let err = parse_ntu_skeleton(text.as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::InvalidSequence(_)), "{err}");
    }

    #[test]
    fn two_frame_fixture_parses_exact_values() {
        let coord = |t: usize, v: usize| {
            [
                0.125 * v as f64 - 1.5,
                0.5 + 0.01 * t as f64,
                3.0 + 0.001 * (v * t) as f64,
            ]
        };
        let text = fixture(2, 25, coord);
        let seq = parse_ntu_skeleton(text.as_bytes(), Some("S001C002P003R002A026.skeleton")).unwrap();
        assert_eq!(seq.frames(), 2);
        assert_eq!(seq.label, 25);
        assert_eq!(seq.sample_id, "S001C002P003R002A026");
        for t in 0..2 {
            for v in 0..25 {
                let want = coord(t, v);
                let want: Vec<f64> = want.iter().map(|c| format!("{c}").parse().unwrap()).collect();
                assert_eq!(seq.position(t, v).to_vec(), want);
            }
        }
    }

    #[test]
    fn truncated_file_names_line() {
        let text = fixture(2, 25, |_, _| [0.1, 0.2, 0.3]);
        let cut: Vec<&str> = text.lines().take(40).collect();
        let err = parse_ntu_skeleton(cut.join("\n").as_bytes(), None).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 41),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_header_and_joint_line() {
        let err = parse_ntu_skeleton(b"two\n", None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));

        let mut text = fixture(2, 25, |_, _| [0.1, 0.2, 0.3]);
        text = text.replacen("0.1 0.2 0.3", "0.1 abc 0.3", 1);
        let err = parse_ntu_skeleton(text.as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 5, .. }), "{err}");
    }

    #[test]
    fn wrong_joint_count_is_unsupported() {
        let text = fixture(2, 20, |_, _| [0.0; 3]);
        let err = parse_ntu_skeleton(text.as_bytes(), None).unwrap_err();
        assert!(matches!(
            err,
            Error::UnsupportedSkeleton { found: 20, line: 4, .. }
        ));
    }

    #[test]
    fn zero_bodies_everywhere_is_empty() {
        let err = parse_ntu_skeleton(b"3\n0\n0\n0\n", None).unwrap_err();
        assert!(matches!(err, Error::EmptySample));
    }

    #[test]
    fn second_body_is_skipped() {
        let mut s = String::from("2\n");
        for t in 0..2 {
            s.push_str("2\n");
            for body in 0..2 {
                s.push_str("1 0 1 1 1 1 0 0 0 2\n25\n");
                for v in 0..25 {
                    s.push_str(&format!("{} {} {} 0 0 0 0 0 0 0 0 2\n", body, t, v));
                }
            }
        }
        let seq = parse_ntu_skeleton(s.as_bytes(), None).unwrap();
        assert_eq!(seq.position(1, 7), [0.0, 1.0, 7.0]);
    }

    #[test]
    fn label_parsing() {
        assert_eq!(label_from_filename("S001C001P001R001A011.skeleton"), Some(10));
        assert_eq!(label_from_filename("/data/S017C003P020R002A060.skeleton"), Some(59));
        assert_eq!(label_from_filename("nolabel.skeleton"), None);
        assert_eq!(label_from_filename("A000"), None);
    }
}
