//! `source_index,label,kind,target_model,f0..f{d-1}` with one sample per
//! LF-terminated line. Empty `kind`/`target_model` cells mean "not
//! attacked". Features are written in scientific notation with nine
//! significant digits, which round-trips every f32 exactly.

use std::fs;
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Terminator, WriterBuilder};

use super::{DetectionDataset, DetectionSample, FeatureVector, Provenance};
use crate::attacks::{AttackKind, TargetModel};
use crate::error::{Error, Result};

pub const CSV_DIGITS: usize = 9;

const FIXED: [&str; 4] = ["source_index", "label", "kind", "target_model"];

pub fn encode_csv(d: &DetectionDataset) -> String {
    let dim = d.feature_dim().unwrap_or(0);
    let mut w = WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(vec![]);
    let header: Vec<String> = FIXED
        .iter()
        .map(|c| c.to_string())
        .chain((0..dim).map(|i| format!("f{i}")))
        .collect();
    // Writing to a Vec cannot fail.
    w.write_record(&header).expect("in-memory write");
    for s in &d.samples {
        let row: Vec<String> = [
            s.source_index.to_string(),
            s.label.to_string(),
            s.kind.map_or(String::new(), |k| k.name().to_string()),
            s.target_model.map_or(String::new(), |t| t.number().to_string()),
        ]
        .into_iter()
        .chain(s.features.values().iter().map(|v| format!("{:.*e}", CSV_DIGITS - 1, v)))
        .collect();
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

fn parse_row(r: &StringRecord, bad: impl Fn(String) -> Error) -> Result<DetectionSample> {
    let source_index = r[0].parse().map_err(|_| bad(format!("bad source index '{}'", &r[0])))?;
    let label = match &r[1] {
        "0" => 0,
        "1" => 1,
        other => return Err(bad(format!("label must be 0 or 1, got '{other}'"))),
    };
    let kind = match &r[2] {
        "" => None,
        k => Some(k.parse::<AttackKind>().map_err(|e| bad(e.to_string()))?),
    };
    let target_model = match &r[3] {
        "" => None,
        t => {
            let n = t.parse::<u8>().map_err(|_| bad(format!("bad target model '{t}'")))?;
            Some(TargetModel::from_number(n).map_err(|e| bad(e.to_string()))?)
        }
    };
    if label == 1 && (kind.is_none() || target_model.is_none()) {
        return Err(bad("attack rows need kind and target model".into()));
    }
    let features = r
        .iter()
        .skip(4)
        .map(|c| c.parse::<f32>().map_err(|_| bad(format!("bad feature '{c}'"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectionSample {
        source_index,
        label,
        kind,
        target_model,
        features: FeatureVector(features),
    })
}

pub fn decode_csv(text: &str, path: &Path, provenance: Provenance) -> Result<DetectionDataset> {
    if text.is_empty() {
        return Err(Error::format(path, 0, "empty file"));
    }
    if !text.ends_with('\n') {
        let last = text.rfind('\n').map_or(0, |i| i + 1);
        return Err(Error::format(path, last as u64, "last line is not LF-terminated"));
    }
    let mut reader = ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::format(path, 0, e.to_string()))?
        .clone();
    if header.len() < FIXED.len() || header.iter().take(4).ne(FIXED) {
        return Err(Error::format(path, 0, "unexpected header"));
    }
    if header.iter().skip(4).enumerate().any(|(i, c)| c != format!("f{i}")) {
        return Err(Error::format(path, 0, "feature columns must be f0, f1, ..."));
    }
    let mut samples = vec![];
    let mut record = StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|e| {
            let (offset, line) = e.position().map_or((0, 0), |p| (p.byte(), p.line()));
            Error::format(path, offset, format!("line {line}: {e}"))
        })?;
        if !more {
            break;
        }
        let (offset, line) = record.position().map_or((0, 0), |p| (p.byte(), p.line()));
        samples.push(parse_row(&record, |msg| Error::format(path, offset, format!("line {line}: {msg}")))?);
    }
    Ok(DetectionDataset { provenance, samples })
}

pub fn write_csv(d: &DetectionDataset, path: &Path) -> Result<()> {
    fs::write(path, encode_csv(d)).map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path, provenance: Provenance) -> Result<DetectionDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_csv(&text, path, provenance)
}
