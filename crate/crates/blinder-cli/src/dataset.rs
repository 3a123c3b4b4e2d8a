//! Dataset files: per-client CSVs, the schema descriptor JSON, and the
//! prepared-segment cache.
//!
//! Client CSV layout (one file per client, `client_<id>.csv`):
//!
//! ```text
//! t,ch0,...,chC,public,priv0,...,privK
//! 0,0.125,...,-0.5,2,1,...,0
//! ```
//!
//! `t` is the sample index; channels are floats; labels are class indices.
//! A `schema.json` descriptor sits alongside the CSVs.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use blinder_core::data::{ChannelStats, DatasetSchema, LabeledSegment, RawRecording};

use crate::error::CliError;

/// Writes the schema descriptor JSON.
pub fn write_schema(path: &Path, schema: &DatasetSchema) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(schema)?;
    fs::write(path, json + "\n")?;
    Ok(())
}

/// Reads and validates the schema descriptor JSON.
pub fn read_schema(path: &Path) -> Result<DatasetSchema, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let schema: DatasetSchema = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    schema.validate()?;
    Ok(schema)
}

pub fn client_csv_path(dir: &Path, client_id: u32) -> PathBuf {
    dir.join(format!("client_{client_id:03}.csv"))
}

/// Writes one client's recording as CSV.
pub fn write_client_csv(dir: &Path, recording: &RawRecording) -> Result<PathBuf, CliError> {
    let path = client_csv_path(dir, recording.client_id);
    let file = fs::File::create(&path)?;
    let mut w = BufWriter::new(file);
    write!(w, "t")?;
    for ch in 0..recording.channels.len() {
        write!(w, ",ch{ch}")?;
    }
    write!(w, ",public")?;
    for a in 0..recording.privates.len() {
        write!(w, ",priv{a}")?;
    }
    writeln!(w)?;
    for t in 0..recording.len() {
        write!(w, "{t}")?;
        for ch in &recording.channels {
            write!(w, ",{}", ch[t])?;
        }
        write!(w, ",{}", recording.public[t])?;
        for p in &recording.privates {
            write!(w, ",{}", p[t])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(path)
}

/// Parses one client CSV against the schema's expected column layout. The
/// file may carry more channels than the schema when magnitude preprocessing
/// reduces 3-axis groups.
pub fn read_client_csv(
    path: &Path,
    client_id: u32,
    expected_privates: usize,
) -> Result<RawRecording, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(CliError::data(format!("{}: empty file", path.display())));
    };
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.first() != Some(&"t") {
        return Err(CliError::data(format!(
            "{}: header must start with `t`",
            path.display()
        )));
    }
    let n_channels = columns.iter().filter(|c| c.starts_with("ch")).count();
    let n_privates = columns.iter().filter(|c| c.starts_with("priv")).count();
    if n_channels == 0 {
        return Err(CliError::data(format!(
            "{}: no channel columns",
            path.display()
        )));
    }
    if n_privates != expected_privates {
        return Err(CliError::data(format!(
            "{}: {n_privates} private-label columns, schema expects {expected_privates}",
            path.display()
        )));
    }
    let expected_cols = 1 + n_channels + 1 + n_privates;
    if columns.len() != expected_cols {
        return Err(CliError::data(format!(
            "{}: unexpected header layout `{header}`",
            path.display()
        )));
    }

    let mut channels: Vec<Vec<f32>> = vec![Vec::new(); n_channels];
    let mut public = Vec::new();
    let mut privates: Vec<Vec<usize>> = vec![Vec::new(); n_privates];
    for (idx, line) in lines {
        let row = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != expected_cols {
            return Err(CliError::data(format!(
                "{}: line {row}: {} fields, expected {expected_cols}",
                path.display(),
                fields.len()
            )));
        }
        for (ch, field) in fields[1..1 + n_channels].iter().enumerate() {
            let v: f32 = field.parse().map_err(|_| {
                CliError::data(format!(
                    "{}: line {row}, field ch{ch}: bad float `{field}`",
                    path.display()
                ))
            })?;
            channels[ch].push(v);
        }
        let pub_field = fields[1 + n_channels];
        public.push(pub_field.parse().map_err(|_| {
            CliError::data(format!(
                "{}: line {row}, field public: bad label `{pub_field}`",
                path.display()
            ))
        })?);
        for (a, field) in fields[2 + n_channels..].iter().enumerate() {
            privates[a].push(field.parse().map_err(|_| {
                CliError::data(format!(
                    "{}: line {row}, field priv{a}: bad label `{field}`",
                    path.display()
                ))
            })?);
        }
    }
    Ok(RawRecording {
        client_id,
        channels,
        public,
        privates,
    })
}

/// Lists `client_*.csv` files in a directory with their parsed ids, sorted.
pub fn list_client_files(dir: &Path) -> Result<Vec<(u32, PathBuf)>, CliError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(rest) = name.strip_prefix("client_") {
            if let Some(id_str) = rest.strip_suffix(".csv") {
                if let Ok(id) = id_str.parse::<u32>() {
                    out.push((id, entry.path()));
                }
            }
        }
    }
    out.sort_by_key(|(id, _)| *id);
    if out.is_empty() {
        return Err(CliError::data(format!(
            "{}: no client_*.csv files",
            dir.display()
        )));
    }
    Ok(out)
}

/// One client's prepared (segmented, standardized) splits.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedClient {
    pub client_id: u32,
    pub train: Vec<LabeledSegment>,
    pub test: Vec<LabeledSegment>,
}

/// The prepared dataset: per-client train/test segments plus the training
/// statistics they were standardized with.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub schema: DatasetSchema,
    pub clients: Vec<PreparedClient>,
    pub stats: ChannelStats,
}

impl PreparedData {
    pub fn client_ids(&self) -> Vec<u32> {
        self.clients.iter().map(|c| c.client_id).collect()
    }

    pub fn client(&self, id: u32) -> Option<&PreparedClient> {
        self.clients.iter().find(|c| c.client_id == id)
    }

    /// All training segments pooled (classifier training data).
    pub fn pooled_train(&self) -> Vec<LabeledSegment> {
        self.clients
            .iter()
            .flat_map(|c| c.train.iter().cloned())
            .collect()
    }

    /// All test segments pooled.
    pub fn pooled_test(&self) -> Vec<LabeledSegment> {
        self.clients
            .iter()
            .flat_map(|c| c.test.iter().cloned())
            .collect()
    }
}

const CACHE_MAGIC: &[u8; 4] = b"BLSC";
const CACHE_VERSION: u32 = 1;

/// Writes the prepared cache: `stats.json` plus one binary segment file per
/// client and split.
pub fn write_cache(dir: &Path, prepared: &PreparedData) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    write_schema(&dir.join("schema.json"), &prepared.schema)?;
    let stats = serde_json::to_string_pretty(&prepared.stats)?;
    fs::write(dir.join("stats.json"), stats + "\n")?;
    for client in &prepared.clients {
        write_segment_file(
            &dir.join(format!("client_{:03}.train.seg", client.client_id)),
            client.client_id,
            &client.train,
        )?;
        write_segment_file(
            &dir.join(format!("client_{:03}.test.seg", client.client_id)),
            client.client_id,
            &client.test,
        )?;
    }
    Ok(())
}

/// Loads a prepared cache written by [`write_cache`].
pub fn read_cache(dir: &Path) -> Result<PreparedData, CliError> {
    let schema = read_schema(&dir.join("schema.json"))?;
    let stats: ChannelStats = serde_json::from_str(
        &fs::read_to_string(dir.join("stats.json"))
            .map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?,
    )?;
    let mut clients = Vec::new();
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(rest) = name.strip_prefix("client_") {
            if let Some(id_str) = rest.strip_suffix(".train.seg") {
                if let Ok(id) = id_str.parse::<u32>() {
                    ids.push(id);
                }
            }
        }
    }
    ids.sort_unstable();
    for id in ids {
        let train = read_segment_file(&dir.join(format!("client_{id:03}.train.seg")), id)?;
        let test = read_segment_file(&dir.join(format!("client_{id:03}.test.seg")), id)?;
        clients.push(PreparedClient {
            client_id: id,
            train,
            test,
        });
    }
    if clients.is_empty() {
        return Err(CliError::data(format!(
            "{}: no prepared clients",
            dir.display()
        )));
    }
    Ok(PreparedData {
        schema,
        clients,
        stats,
    })
}

fn write_segment_file(
    path: &Path,
    client_id: u32,
    segments: &[LabeledSegment],
) -> Result<(), CliError> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&client_id.to_le_bytes());
    let dim = segments.first().map_or(0, |s| s.x.len());
    let attrs = segments.first().map_or(0, |s| s.private_labels.len());
    out.extend_from_slice(&(segments.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(attrs as u32).to_le_bytes());
    for seg in segments {
        out.extend_from_slice(&(seg.public_label as u16).to_le_bytes());
        for &p in &seg.private_labels {
            out.extend_from_slice(&(p as u16).to_le_bytes());
        }
        for &v in &seg.x {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_segment_file(path: &Path, client_id: u32) -> Result<Vec<LabeledSegment>, CliError> {
    let bytes =
        fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let corrupt = || CliError::data(format!("{}: corrupt segment cache", path.display()));
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], CliError> {
        let end = pos.checked_add(n).ok_or_else(corrupt)?;
        if end > bytes.len() {
            return Err(corrupt());
        }
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(4)? != CACHE_MAGIC {
        return Err(corrupt());
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(CliError::data(format!(
            "{}: cache version {version} unsupported",
            path.display()
        )));
    }
    let file_client = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if file_client != client_id {
        return Err(corrupt());
    }
    let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let attrs = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut segments = Vec::with_capacity(n);
    for _ in 0..n {
        let public_label = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let mut private_labels = Vec::with_capacity(attrs);
        for _ in 0..attrs {
            private_labels.push(u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize);
        }
        let raw = take(dim * 4)?;
        let x = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        segments.push(LabeledSegment {
            x,
            public_label,
            private_labels,
            client_id,
        });
    }
    if pos != bytes.len() {
        return Err(corrupt());
    }
    Ok(segments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use blinder_core::data::PrivateAttribute;

    fn schema() -> DatasetSchema {
        DatasetSchema {
            channels: 2,
            window: 4,
            stride: 2,
            public_classes: 2,
            private_attributes: vec![PrivateAttribute {
                name: "attr".into(),
                classes: 2,
            }],
            magnitude_mode: false,
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = RawRecording {
            client_id: 3,
            channels: vec![vec![0.5, -1.25, 2.0], vec![0.0, 1.0, -0.125]],
            public: vec![0, 0, 1],
            privates: vec![vec![1, 1, 1]],
        };
        let path = write_client_csv(dir.path(), &rec).unwrap();
        let back = read_client_csv(&path, 3, 1).unwrap();
        assert_eq!(rec, back);
    }

    #[test]
    fn csv_errors_carry_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("client_000.csv");
        std::fs::write(&path, "t,ch0,public,priv0\n0,0.5,1,0\n1,oops,0,0\n").unwrap();
        let err = read_client_csv(&path, 0, 1).unwrap_err();
        let msg = err.to_string();
        // file-absolute line numbers: header is line 1, bad row is line 3
        assert!(msg.contains("line 3") && msg.contains("ch0"), "{msg}");
    }

    #[test]
    fn schema_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("schema.json");
        write_schema(&path, &schema()).unwrap();
        let back = read_schema(&path).unwrap();
        assert_eq!(back, schema());

        std::fs::write(&path, "{\"channels\": 0}").unwrap();
        assert!(read_schema(&path).is_err());
    }

    #[test]
    fn prepared_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let seg = |c: u32, label: usize| LabeledSegment {
            x: vec![label as f32; 8],
            public_label: label,
            private_labels: vec![1 - label],
            client_id: c,
        };
        let prepared = PreparedData {
            schema: schema(),
            clients: vec![
                PreparedClient {
                    client_id: 0,
                    train: vec![seg(0, 0), seg(0, 1)],
                    test: vec![seg(0, 0)],
                },
                PreparedClient {
                    client_id: 2,
                    train: vec![seg(2, 1)],
                    test: vec![seg(2, 0)],
                },
            ],
            stats: ChannelStats {
                mean: vec![0.0, 0.5],
                std: vec![1.0, 2.0],
            },
        };
        write_cache(dir.path(), &prepared).unwrap();
        let back = read_cache(dir.path()).unwrap();
        assert_eq!(back.clients, prepared.clients);
        assert_eq!(back.stats, prepared.stats);
        assert_eq!(back.schema, prepared.schema);
    }
}
