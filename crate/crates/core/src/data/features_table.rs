use std::io::Write;
use std::path::Path;

use super::{FeatureDescriptor, DESCRIPTOR_DIMS, DESCRIPTOR_NAMES};
use crate::error::{Error, Result};

/// One row of `features.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub video_id: String,
    pub frame_index: u32,
    pub object_id: u32,
    pub descriptor: FeatureDescriptor,
}

/// Writes `video,frame,id,<22 descriptor columns>`. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_feature_table(mut w: impl Write, rows: &[FeatureRow]) -> std::io::Result<()> {
    write!(w, "video,frame,id")?;
    for name in DESCRIPTOR_NAMES {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for r in rows {
        write!(w, "{},{},{}", r.video_id, r.frame_index, r.object_id)?;
        for v in r.descriptor.values() {
            write!(w, ",{v:?}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn load_feature_table(path: impl AsRef<Path>) -> Result<Vec<FeatureRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let ncols = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .len();
    if ncols != 3 + DESCRIPTOR_DIMS {
        return Err(Error::Format(format!(
            "feature table needs {} columns, found {ncols}",
            3 + DESCRIPTOR_DIMS
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |what: &str| Error::Parse {
            line,
            msg: format!("malformed {what}"),
        };
        let frame_index = rec[1].parse().map_err(|_| bad("frame"))?;
        let object_id = rec[2].parse().map_err(|_| bad("id"))?;
        let values = rec
            .iter()
            .skip(3)
            .map(|s| s.parse::<f64>().map_err(|_| bad("feature value")))
            .collect::<Result<Vec<_>>>()?;
        out.push(FeatureRow {
            video_id: rec[0].to_string(),
            frame_index,
            object_id,
            descriptor: FeatureDescriptor::from_slice(&values)?,
        });
    }
    Ok(out)
}
