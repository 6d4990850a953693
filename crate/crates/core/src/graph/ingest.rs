//! CSV ingestion for bipartite interaction logs.
//!
//! Expected layout: one header line, then
//! `user_id,item_id,timestamp,state_label[,f0,f1,...]` rows. Users are
//! remapped to `[0, #users)` and items to `[#users, #users + #items)` in
//! first-appearance order, so the mapping is a pure function of the file.

use std::collections::HashMap;
use std::path::Path;

use super::{EdgeEvent, EventLog, GraphError, NodeId};

pub fn ingest_csv(path: &Path) -> Result<EventLog, GraphError> {
    let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ingest_csv_str(&text)
}

pub fn ingest_csv_str(text: &str) -> Result<EventLog, GraphError> {
    let mut lines = text.lines().enumerate();
    let (_, _header) = lines.next().ok_or(GraphError::EmptyLog)?;

    let mut users: HashMap<u64, u32> = HashMap::new();
    let mut items: HashMap<u64, u32> = HashMap::new();
    // (user_idx, item_idx, t, label, features); item index is offset by the
    // final user count once the whole file has been read.
    let mut rows: Vec<(u32, u32, f64, bool, Vec<f64>)> = Vec::new();
    let mut feat_dim: Option<usize> = None;

    for (lineno, line) in lines {
        let human_line = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(GraphError::Ingest {
                line: human_line,
                msg: format!("expected at least 4 columns, got {}", fields.len()),
            });
        }
        let parse_u64 = |s: &str, what: &str| {
            s.trim().parse::<u64>().map_err(|_| GraphError::Ingest {
                line: human_line,
                msg: format!("{what} `{s}` is not a non-negative integer"),
            })
        };
        let user = parse_u64(fields[0], "user id")?;
        let item = parse_u64(fields[1], "item id")?;
        let t = fields[2]
            .trim()
            .parse::<f64>()
            .map_err(|_| GraphError::Ingest {
                line: human_line,
                msg: format!("timestamp `{}` is not a number", fields[2]),
            })?;
        if !(t >= 0.0) || !t.is_finite() {
            return Err(GraphError::Ingest {
                line: human_line,
                msg: format!("timestamp {t} must be finite and non-negative"),
            });
        }
        let label = match fields[3].trim().parse::<f64>() {
            Ok(v) if v == 0.0 => false,
            Ok(v) if v == 1.0 => true,
            _ => {
                return Err(GraphError::Ingest {
                    line: human_line,
                    msg: format!("state label `{}` must be 0 or 1", fields[3]),
                })
            }
        };
        let features: Vec<f64> = fields[4..]
            .iter()
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| GraphError::Ingest {
                    line: human_line,
                    msg: format!("feature `{s}` is not a number"),
                })
            })
            .collect::<Result<_, _>>()?;
        match feat_dim {
            None => feat_dim = Some(features.len()),
            Some(k) if k != features.len() => {
                return Err(GraphError::Ingest {
                    line: human_line,
                    msg: format!("row has {} features, earlier rows had {k}", features.len()),
                })
            }
            _ => {}
        }

        let next_user = users.len() as u32;
        let user_idx = *users.entry(user).or_insert(next_user);
        let next_item = items.len() as u32;
        let item_idx = *items.entry(item).or_insert(next_item);
        rows.push((user_idx, item_idx, t, label, features));
    }

    if rows.is_empty() {
        return Err(GraphError::EmptyLog);
    }

    let user_count = users.len() as u32;
    let events: Vec<EdgeEvent> = rows
        .into_iter()
        .enumerate()
        .map(|(seq, (u, i, t, label, features))| EdgeEvent {
            src: NodeId(u),
            dst: NodeId(user_count + i),
            t,
            features,
            label: Some(label),
            seq: seq as u32,
        })
        .collect();
    let num_nodes = users.len() + items.len();
    EventLog::from_events(events, num_nodes, feat_dim.unwrap_or(0))
}
