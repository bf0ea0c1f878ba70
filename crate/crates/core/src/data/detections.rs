use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BoundingBox, DetectionRecord, ObjectClass};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct RawDetection {
    video: String,
    frame: u32,
    id: u32,
    class: String,
    bbox: [i64; 4],
}

/// Reads a JSON Lines detection file. Records come back sorted by
/// `(frame_index, object_id)`.
pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_detections(BufReader::new(file))
}

pub fn parse_detections(reader: impl BufRead) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDetection = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let object_class = ObjectClass::parse(&raw.class).ok_or_else(|| {
            Error::Validation(format!(
                "line {lineno}: unknown object class `{}`",
                raw.class
            ))
        })?;
        let [x, y, w, h] = raw.bbox;
        if w < 1 || h < 1 || w > u32::MAX as i64 || h > u32::MAX as i64 {
            return Err(Error::Validation(format!(
                "line {lineno}: bounding box extents must be >= 1, got {w}x{h}"
            )));
        }
        let bbox = BoundingBox::new(x, y, w as u32, h as u32)?;
        if !seen.insert((raw.video.clone(), raw.frame, raw.id)) {
            return Err(Error::Validation(format!(
                "line {lineno}: duplicate detection (video {}, frame {}, id {})",
                raw.video, raw.frame, raw.id
            )));
        }
        out.push(DetectionRecord {
            video_id: raw.video,
            frame_index: raw.frame,
            object_id: raw.id,
            object_class,
            bbox,
        });
    }
    out.sort_by_key(|d| (d.frame_index, d.object_id));
    Ok(out)
}

pub fn write_detections(mut w: impl Write, records: &[DetectionRecord]) -> std::io::Result<()> {
    for d in records {
        let raw = RawDetection {
            video: d.video_id.clone(),
            frame: d.frame_index,
            id: d.object_id,
            class: d.object_class.as_str().to_string(),
            bbox: [d.bbox.x, d.bbox.y, d.bbox.w as i64, d.bbox.h as i64],
        };
        serde_json::to_writer(&mut w, &raw)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Vec<DetectionRecord>> {
        parse_detections(s.as_bytes())
    }

    #[test]
    fn single_record() {
        let recs =
            parse(r#"{"video":"v1","frame":0,"id":3,"class":"vehicle","bbox":[10,20,30,40]}"#)
                .unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].bbox, BoundingBox::new(10, 20, 30, 40).unwrap());
        assert_eq!(recs[0].object_class, ObjectClass::Vehicle);
        assert_eq!(recs[0].object_id, 3);
    }

    #[test]
    fn empty_file() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn zero_width_rejected() {
        let err = parse(r#"{"video":"v1","frame":0,"id":3,"class":"vehicle","bbox":[10,20,0,40]}"#)
            .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let s = "{\"video\":\"v\",\"frame\":0,\"id\":1,\"class\":\"human\",\"bbox\":[0,0,1,1]}\n{oops";
        match parse(s).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn unknown_class() {
        let err = parse(r#"{"video":"v1","frame":0,"id":3,"class":"dog","bbox":[1,1,1,1]}"#)
            .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn sorted_and_unique() {
        let s = concat!(
            r#"{"video":"v","frame":2,"id":1,"class":"human","bbox":[0,0,1,1]}"#,
            "\n",
            r#"{"video":"v","frame":1,"id":5,"class":"human","bbox":[0,0,1,1]}"#,
            "\n",
            r#"{"video":"v","frame":1,"id":2,"class":"human","bbox":[0,0,1,1]}"#,
        );
        let recs = parse(s).unwrap();
        let keys: Vec<_> = recs.iter().map(|d| (d.frame_index, d.object_id)).collect();
        assert_eq!(keys, vec![(1, 2), (1, 5), (2, 1)]);
        let dup = format!("{}\n{}", s.lines().next().unwrap(), s.lines().next().unwrap());
        assert!(matches!(parse(&dup), Err(Error::Validation(_))));
    }

    #[test]
    fn write_then_parse() {
        let recs =
            parse(r#"{"video":"v1","frame":4,"id":3,"class":"human","bbox":[-2,20,30,40]}"#)
                .unwrap();
        let mut buf = Vec::new();
        write_detections(&mut buf, &recs).unwrap();
        assert_eq!(parse_detections(buf.as_slice()).unwrap(), recs);
    }
}
