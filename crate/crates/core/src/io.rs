//! File formats.
//!
//! CSV files start with a `#format_version=1` comment line; readers skip
//! `#` lines. JSON documents carry `format_version` as their first key.
//!
//! - events: `realization,type,time`, rows of a realization in time order;
//! - windows: `realization,t_minus,t_plus`, one row per realization `0..H`;
//! - network: `src,dst` directed edge list, 0-based ids.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensors::TensorPair;
use crate::types::{Basis, Event, EventHistory, Hyperparams, LowRankModel, Network, Realization};

pub const FORMAT_VERSION: u32 = 1;
const CSV_HEADER_LINE: &str = "#format_version=1";

fn with_path(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(with_path(path))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(with_path(path))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(with_path(path))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = open(path)?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let mut file = BufWriter::new(create(path)?);
    writeln!(file, "{CSV_HEADER_LINE}")?;
    Ok(csv::Writer::from_writer(file))
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn in_file(path: &Path, line: u64, inner: Error) -> Error {
    Error::InFile {
        path: path.to_path_buf(),
        line,
        inner: Box::new(inner),
    }
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, idx: usize, name: &str) -> Result<T> {
    let raw = rec
        .get(idx)
        .ok_or_else(|| parse_err(path, line, format!("missing column '{name}'")))?;
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse '{raw}' as {name}")))
}

fn check_header(path: &Path, reader: &mut csv::Reader<File>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?.clone();
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        let line = reader.position().line().max(1);
        return Err(parse_err(
            path,
            line,
            format!("expected header '{}', found '{}'", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

/// Reads an event history. With `d = None` the number of types is one more
/// than the largest type id seen (at least 1).
pub fn load_events(events_path: &Path, windows_path: &Path, d: Option<usize>) -> Result<EventHistory> {
    let mut windows: Vec<Option<(f64, f64)>> = Vec::new();
    let mut reader = csv_reader(windows_path)?;
    check_header(windows_path, &mut reader, &["realization", "t_minus", "t_plus"])?;
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let h: usize = field(windows_path, line, &rec, 0, "realization")?;
        let t_minus: f64 = field(windows_path, line, &rec, 1, "t_minus")?;
        let t_plus: f64 = field(windows_path, line, &rec, 2, "t_plus")?;
        if !(t_minus.is_finite() && t_plus.is_finite() && t_minus <= t_plus) {
            return Err(in_file(windows_path, line, Error::InvalidWindow { realization: h, t_minus, t_plus }));
        }
        if h >= windows.len() {
            windows.resize(h + 1, None);
        }
        if windows[h].is_some() {
            return Err(parse_err(windows_path, line, format!("realization {h} listed twice")));
        }
        windows[h] = Some((t_minus, t_plus));
    }
    if let Some(h) = windows.iter().position(Option::is_none) {
        return Err(parse_err(windows_path, 0, format!("realization {h} has no window")));
    }
    let mut reals: Vec<Realization> = windows
        .into_iter()
        .map(|w| {
            let (a, b) = w.expect("checked above");
            Realization::new(a, b, Vec::new())
        })
        .collect();

    let mut reader = csv_reader(events_path)?;
    check_header(events_path, &mut reader, &["realization", "type", "time"])?;
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let h: usize = field(events_path, line, &rec, 0, "realization")?;
        let kind: usize = field(events_path, line, &rec, 1, "type")?;
        let time: f64 = field(events_path, line, &rec, 2, "time")?;
        let n_reals = reals.len();
        let real = reals
            .get_mut(h)
            .ok_or_else(|| parse_err(events_path, line, format!("realization {h} has no window ({n_reals} windows)")))?;
        let event = real.events.len();
        if let Some(d) = d {
            if kind >= d {
                return Err(in_file(events_path, line, Error::TypeOutOfRange { realization: h, event, kind, d }));
            }
        }
        if !(time >= real.t_minus && time <= real.t_plus) {
            return Err(in_file(
                events_path,
                line,
                Error::OutOfWindow {
                    realization: h,
                    event,
                    time,
                    t_minus: real.t_minus,
                    t_plus: real.t_plus,
                },
            ));
        }
        if real.events.last().is_some_and(|e| e.time > time) {
            return Err(in_file(events_path, line, Error::NonMonotoneTime { realization: h, event }));
        }
        real.events.push(Event { time, kind });
    }
    let d = d.unwrap_or_else(|| {
        reals
            .iter()
            .flat_map(|r| r.events.iter().map(|e| e.kind + 1))
            .max()
            .unwrap_or(1)
    });
    EventHistory::new(d, reals)
}

pub fn save_events(history: &EventHistory, events_path: &Path, windows_path: &Path) -> Result<()> {
    let mut w = csv_writer(windows_path)?;
    w.write_record(["realization", "t_minus", "t_plus"])?;
    for (h, r) in history.realizations().iter().enumerate() {
        w.write_record([h.to_string(), r.t_minus.to_string(), r.t_plus.to_string()])?;
    }
    w.flush()?;
    let mut w = csv_writer(events_path)?;
    w.write_record(["realization", "type", "time"])?;
    for (h, r) in history.realizations().iter().enumerate() {
        for e in &r.events {
            w.write_record([h.to_string(), e.kind.to_string(), e.time.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Self-loop handling when reading an edge list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelfLoops {
    /// Keep the diagonal exactly as listed.
    #[default]
    AsListed,
    /// Add `v → v` for every type.
    On,
    /// Reject diagonal edges.
    Off,
}

/// Reads a directed edge list on `d` types.
pub fn load_network(path: &Path, d: usize, self_loops: SelfLoops) -> Result<Network> {
    let mut reader = csv_reader(path)?;
    check_header(path, &mut reader, &["src", "dst"])?;
    let mut seen = BTreeSet::new();
    let mut duplicates = 0usize;
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let src: usize = field(path, line, &rec, 0, "src")?;
        let dst: usize = field(path, line, &rec, 1, "dst")?;
        for id in [src, dst] {
            if id >= d {
                return Err(Error::UnknownNode {
                    path: path.to_path_buf(),
                    line,
                    id,
                    d,
                });
            }
        }
        if src == dst && self_loops == SelfLoops::Off {
            return Err(parse_err(path, line, format!("self-loop {src} -> {src} while self-loops are off")));
        }
        if !seen.insert((src, dst)) {
            duplicates += 1;
        }
    }
    if duplicates > 0 {
        warn!("{}: {duplicates} duplicate edges ignored", path.display());
    }
    let net = Network::from_edges(d, seen)?;
    Ok(match self_loops {
        SelfLoops::On => net.with_self_loops(true),
        _ => net,
    })
}

pub fn save_network(network: &Network, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["src", "dst"])?;
    for (v, u) in network.edges() {
        w.write_record([v.to_string(), u.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// JSON body preceded by its format version.
#[derive(Debug, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub format_version: u32,
    #[serde(flatten)]
    pub body: T,
}

pub fn write_json<T: Serialize>(path: &Path, body: &T) -> Result<()> {
    let mut file = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(
        &mut file,
        &Versioned {
            format_version: FORMAT_VERSION,
            body,
        },
    )?;
    writeln!(file)?;
    file.flush()?;
    Ok(())
}

pub fn to_json_string<T: Serialize>(body: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&Versioned {
        format_version: FORMAT_VERSION,
        body,
    })?)
}

fn check_version(path: &Path, found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            path: path.to_path_buf(),
            found,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    let doc: Versioned<T> = serde_json::from_str(&text)?;
    check_version(path, doc.format_version)?;
    Ok(doc.body)
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    d: usize,
    rank: usize,
    basis: Basis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hyperparams: Option<Hyperparams>,
    /// `d` rows of `r` entries.
    projection: Vec<Vec<f64>>,
    /// `alpha[j][i]` holds `α_{ji,1..=K}`.
    alpha: Vec<Vec<Vec<f64>>>,
    /// `beta[i]` holds `β_{i,0..=K}`.
    beta: Vec<Vec<f64>>,
}

pub fn save_model(model: &LowRankModel, hyperparams: Option<&Hyperparams>, path: &Path) -> Result<()> {
    let (d, r) = (model.d(), model.rank());
    let doc = ModelFile {
        format_version: FORMAT_VERSION,
        d,
        rank: r,
        basis: model.basis(),
        hyperparams: hyperparams.cloned(),
        projection: (0..d).map(|u| model.projection_row(u).to_vec()).collect(),
        alpha: (0..r)
            .map(|j| (0..r).map(|i| model.alpha_slice(j, i).to_vec()).collect())
            .collect(),
        beta: (0..r).map(|i| model.beta_slice(i).to_vec()).collect(),
    };
    let mut file = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut file, &doc)?;
    writeln!(file)?;
    file.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(LowRankModel, Option<Hyperparams>)> {
    let text = read_text(path)?;
    let doc: ModelFile = serde_json::from_str(&text)?;
    check_version(path, doc.format_version)?;
    let bad = |m: String| parse_err(path, 0, m);
    let r = doc.rank;
    if doc.projection.len() != doc.d || doc.projection.iter().any(|row| row.len() != r) {
        return Err(bad(format!("projection must be {} x {r}", doc.d)));
    }
    if doc.alpha.len() != r || doc.alpha.iter().any(|row| row.len() != r) {
        return Err(bad(format!("alpha must be {r} x {r} x K")));
    }
    let projection = doc.projection.concat();
    let kernel: Vec<f64> = doc.alpha.into_iter().flatten().flatten().collect();
    let baseline = doc.beta.concat();
    let model = LowRankModel::from_parts(doc.d, r, doc.basis, projection, kernel, baseline)?;
    Ok((model, doc.hyperparams))
}

/// Writes named columns sharing the time grid `ts`.
pub fn write_curves(path: &Path, ts: &[f64], columns: &[(String, Vec<f64>)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(columns.iter().map(|c| c.0.clone()));
    w.write_record(&header)?;
    for (s, t) in ts.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(columns.iter().map(|c| c.1[s].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes per-event score vectors: `realization,event,time,type,score_0..`.
pub fn write_scores(path: &Path, history: &EventHistory, scores: &[Vec<f64>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = ["realization", "event", "time", "type"].iter().map(|s| s.to_string()).collect();
    header.extend((0..history.d()).map(|u| format!("score_{u}")));
    w.write_record(&header)?;
    let mut it = scores.iter();
    for (h, r) in history.realizations().iter().enumerate() {
        for (m, e) in r.events.iter().enumerate() {
            let s = it
                .next()
                .ok_or_else(|| Error::DimensionMismatch("fewer score vectors than events".into()))?;
            let mut row = vec![h.to_string(), m.to_string(), e.time.to_string(), e.kind.to_string()];
            row.extend(s.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Dumps the nonzero entries of `D` (`h,m,u,v,k,value`) and `B`
/// (`h,v,k,value`, unmasked per source). The baseline slot uses `v = d`.
pub fn write_tensors(tensors: &TensorPair, d_path: &Path, b_path: &Path) -> Result<()> {
    let mut w = csv_writer(d_path)?;
    w.write_record(["h", "m", "u", "v", "k", "value"])?;
    for (h, m, v, k, val) in tensors.d_entries() {
        let u = tensors.event_type(tensors.realization_range(h).start + m);
        w.write_record([h.to_string(), m.to_string(), u.to_string(), v.to_string(), k.to_string(), val.to_string()])?;
    }
    w.flush()?;
    let mut w = csv_writer(b_path)?;
    w.write_record(["h", "v", "k", "value"])?;
    for (h, v, k, val) in tensors.b_entries() {
        w.write_record([h.to_string(), v.to_string(), k.to_string(), val.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Paths of the two files of an event history stored under a common stem.
pub fn history_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let name = stem.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let dir = stem.parent().unwrap_or(Path::new(""));
    (dir.join(format!("{name}.events.csv")), dir.join(format!("{name}.windows.csv")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EventHistory {
        EventHistory::new(
            3,
            vec![
                Realization::new(
                    0.0,
                    10.0,
                    vec![Event { time: 0.1, kind: 2 }, Event { time: 1.0 / 3.0, kind: 0 }],
                ),
                Realization::new(1.5, 2.5, vec![]),
                Realization::new(0.0, 1.0, vec![Event { time: 0.7, kind: 1 }]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn events_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (e, w) = history_paths(&dir.path().join("h"));
        let h = sample();
        save_events(&h, &e, &w).unwrap();
        assert!(std::fs::read_to_string(&e).unwrap().starts_with("#format_version=1\n"));
        let back = load_events(&e, &w, Some(3)).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn out_of_window_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let e = dir.path().join("e.csv");
        let w = dir.path().join("w.csv");
        std::fs::write(&w, "realization,t_minus,t_plus\n0,0,5\n").unwrap();
        std::fs::write(&e, "realization,type,time\n0,1,1.0\n0,0,7.5\n").unwrap();
        let err = load_events(&e, &w, Some(2)).unwrap_err();
        assert_eq!(err.kind(), "out_of_window");
        let msg = err.to_string();
        assert!(msg.contains(":3:") && msg.contains("realization 0"), "{msg}");
    }

    #[test]
    fn type_out_of_range_and_malformed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let e = dir.path().join("e.csv");
        let w = dir.path().join("w.csv");
        std::fs::write(&w, "realization,t_minus,t_plus\n0,0,5\n").unwrap();
        std::fs::write(&e, "realization,type,time\n0,4,1.0\n").unwrap();
        assert_eq!(load_events(&e, &w, Some(2)).unwrap_err().kind(), "type_out_of_range");
        std::fs::write(&e, "realization,type,time\n0,x,1.0\n").unwrap();
        assert_eq!(load_events(&e, &w, Some(2)).unwrap_err().kind(), "parse");
    }

    #[test]
    fn empty_events_file_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let e = dir.path().join("e.csv");
        let w = dir.path().join("w.csv");
        std::fs::write(&w, "realization,t_minus,t_plus\n0,0,5\n1,0,3\n").unwrap();
        std::fs::write(&e, "realization,type,time\n").unwrap();
        let h = load_events(&e, &w, Some(4)).unwrap();
        assert_eq!(h.num_events(), 0);
        assert_eq!(h.realizations().len(), 2);
    }

    #[test]
    fn network_loading_policies() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.csv");
        std::fs::write(&p, "src,dst\n0,1\n0,1\n2,2\n").unwrap();
        let net = load_network(&p, 3, SelfLoops::AsListed).unwrap();
        assert_eq!(net.num_edges(), 2);
        assert!(load_network(&p, 3, SelfLoops::Off).is_err());
        let on = load_network(&p, 3, SelfLoops::On).unwrap();
        assert_eq!(on.num_edges(), 4);
        std::fs::write(&p, "src,dst\n0,7\n").unwrap();
        let err = load_network(&p, 3, SelfLoops::AsListed).unwrap_err();
        assert!(err.to_string().contains("unknown node id 7"));
        std::fs::write(&p, "src,dst\n").unwrap();
        assert_eq!(load_network(&p, 3, SelfLoops::On).unwrap().num_edges(), 3);
        let net = load_network(&p, 3, SelfLoops::AsListed).unwrap();
        save_network(&net, &p).unwrap();
        assert_eq!(load_network(&p, 3, SelfLoops::AsListed).unwrap(), net);
    }

    #[test]
    fn model_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let hp = Hyperparams {
            kernels: 2,
            ..Hyperparams::default()
        };
        let mut m = LowRankModel::zeros(3, 2, hp.basis());
        for (c, x) in m.kernel_coefficients_mut().iter_mut().enumerate() {
            *x = (c as f64 + 0.1).sqrt() / 7.0 - 0.2;
        }
        for (c, x) in m.projection_mut().iter_mut().enumerate() {
            *x = 1.0 / (c as f64 + 3.0);
        }
        m.baseline_coefficients_mut()[0] = std::f64::consts::PI;
        save_model(&m, Some(&hp), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.trim_start().starts_with("{\n  \"format_version\": 1"));
        let (back, hp2) = load_model(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(hp2, Some(hp));
    }

    #[test]
    fn versioned_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_json(&p, &Hyperparams::default()).unwrap();
        let back: Hyperparams = read_json(&p).unwrap();
        assert_eq!(back, Hyperparams::default());
        std::fs::write(&p, std::fs::read_to_string(&p).unwrap().replace("\"format_version\": 1", "\"format_version\": 9")).unwrap();
        assert_eq!(read_json::<Hyperparams>(&p).unwrap_err().kind(), "format_version");
    }
}
