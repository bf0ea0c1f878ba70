use std::io::{Read, Write};
use std::path::Path;

use super::FrameAnnotation;
use crate::error::{Error, Result};

fn csv_reader<R: Read>(r: R, expected: &[&str]) -> Result<csv::Reader<R>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Format(format!(
            "expected CSV header `{}`, found `{}`",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(rdr)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse {
            line,
            msg: format!("column {} is missing or malformed", i + 1),
        })
}

fn parse_label(raw: u32, line: usize) -> Result<bool> {
    match raw {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(Error::Validation(format!(
            "line {line}: label {other} is not binary"
        ))),
    }
}

pub fn load_frame_annotations(path: impl AsRef<Path>) -> Result<Vec<FrameAnnotation>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_frame_annotations(file)
}

/// `frame,label` rows; frame indices must be strictly increasing.
pub fn parse_frame_annotations(r: impl Read) -> Result<Vec<FrameAnnotation>> {
    let mut rdr = csv_reader(r, &["frame", "label"])?;
    let mut out: Vec<FrameAnnotation> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let frame: u32 = field(&rec, 0, line)?;
        let anomalous = parse_label(field(&rec, 1, line)?, line)?;
        if let Some(prev) = out.last() {
            if frame == prev.frame_index {
                return Err(Error::Validation(format!(
                    "line {line}: duplicate frame {frame}"
                )));
            }
            if frame < prev.frame_index {
                return Err(Error::Validation(format!(
                    "line {line}: frame {frame} out of order"
                )));
            }
        }
        out.push(FrameAnnotation {
            frame_index: frame,
            anomalous,
        });
    }
    Ok(out)
}

pub fn write_frame_annotations(mut w: impl Write, ann: &[FrameAnnotation]) -> std::io::Result<()> {
    writeln!(w, "frame,label")?;
    for a in ann {
        writeln!(w, "{},{}", a.frame_index, a.anomalous as u8)?;
    }
    Ok(())
}

/// Ground-truth verdict for one detected object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectLabel {
    pub video_id: String,
    pub frame_index: u32,
    pub object_id: u32,
    pub anomalous: bool,
}

/// `video,frame,id,label` rows.
pub fn load_object_labels(path: impl AsRef<Path>) -> Result<Vec<ObjectLabel>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv_reader(file, &["video", "frame", "id", "label"])?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        out.push(ObjectLabel {
            video_id: field(&rec, 0, line)?,
            frame_index: field(&rec, 1, line)?,
            object_id: field(&rec, 2, line)?,
            anomalous: parse_label(field(&rec, 3, line)?, line)?,
        });
    }
    Ok(out)
}

pub fn write_object_labels(mut w: impl Write, labels: &[ObjectLabel]) -> std::io::Result<()> {
    writeln!(w, "video,frame,id,label")?;
    for l in labels {
        writeln!(
            w,
            "{},{},{},{}",
            l.video_id, l.frame_index, l.object_id, l.anomalous as u8
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_rows() {
        let a = parse_frame_annotations("frame,label\n0,0\n1,1\n".as_bytes()).unwrap();
        assert_eq!(a.len(), 2);
        assert!(!a[0].anomalous);
        assert!(a[1].anomalous);
    }

    #[test]
    fn non_binary_label() {
        let e = parse_frame_annotations("frame,label\n0,2\n".as_bytes()).unwrap_err();
        assert!(matches!(e, Error::Validation(_)));
    }

    #[test]
    fn duplicate_frame() {
        let e = parse_frame_annotations("frame,label\n5,0\n5,1\n".as_bytes()).unwrap_err();
        assert!(matches!(e, Error::Validation(m) if m.contains("duplicate")));
    }

    #[test]
    fn wrong_header() {
        let e = parse_frame_annotations("f,l\n0,0\n".as_bytes()).unwrap_err();
        assert!(matches!(e, Error::Format(_)));
    }

    #[test]
    fn write_parse() {
        let a = vec![
            FrameAnnotation {
                frame_index: 3,
                anomalous: true,
            },
            FrameAnnotation {
                frame_index: 9,
                anomalous: false,
            },
        ];
        let mut buf = Vec::new();
        write_frame_annotations(&mut buf, &a).unwrap();
        assert_eq!(parse_frame_annotations(buf.as_slice()).unwrap(), a);
    }
}
