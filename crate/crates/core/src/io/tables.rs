use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Trim};

use super::{IoError, Result};
use crate::eval::{PreferencePair, Problem};
use crate::infini_gram::TraceRecord;

/// Reads headerless-or-headed CSV rows with exactly `width` fields. A first
/// row whose fields do not all parse is treated as a header and skipped.
fn rows<T>(
    path: &Path,
    width: usize,
    parse: impl Fn(&StringRecord) -> Option<T>,
) -> Result<Vec<T>> {
    let mut rdr = ReaderBuilder::new()
        .has_headers(false)
        .trim(Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| IoError::io(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| IoError::Csv {
            line: i as u64 + 1,
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        if rec.len() != width {
            return Err(IoError::Csv {
                line,
                msg: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        match parse(&rec) {
            Some(v) => out.push(v),
            None if i == 0 => {}
            None => {
                return Err(IoError::Csv {
                    line,
                    msg: format!(
                        "cannot parse `{}`",
                        rec.iter().collect::<Vec<_>>().join(",")
                    ),
                })
            }
        }
    }
    Ok(out)
}

/// `example_id, token_index, prob` rows.
pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRecord>> {
    rows(path, 3, |r| {
        Some(TraceRecord {
            example_id: r[0].to_string(),
            token_index: r[1].parse().ok()?,
            prob: r[2].parse().ok()?,
        })
    })
}

/// `problem_id, N, c` rows.
pub fn read_problems_csv(path: &Path) -> Result<Vec<(String, Problem)>> {
    rows(path, 3, |r| {
        Some((
            r[0].to_string(),
            Problem {
                n: r[1].parse().ok()?,
                c: r[2].parse().ok()?,
            },
        ))
    })
}

/// `r_w, r_l` rows.
pub fn read_pairs_csv(path: &Path) -> Result<Vec<PreferencePair>> {
    rows(path, 2, |r| {
        Some(PreferencePair {
            r_w: r[0].parse().ok()?,
            r_l: r[1].parse().ok()?,
        })
    })
}
