use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{data, Error, Result};
use crate::qmixcore::EpisodeMetrics;

pub const METRICS_HEADER: [&str; 11] = [
    "epoch",
    "episode",
    "successes",
    "collisions",
    "silent",
    "total_reward",
    "success_rate",
    "oracle_bound",
    "epsilon",
    "mean_loss",
    "eval",
];

/// One logged episode. Training rows carry a run-wide episode index; rows of a greedy
/// evaluation block (`eval = 1`) are numbered within the block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: u64,
    pub episode: u64,
    pub successes: usize,
    pub collisions: usize,
    pub silent: usize,
    pub total_reward: f64,
    pub success_rate: f64,
    pub oracle_bound: usize,
    pub epsilon: f64,
    pub mean_loss: Option<f64>,
    pub eval: u8,
}

impl MetricsRow {
    pub fn new(epoch: u64, episode: u64, m: &EpisodeMetrics, mean_loss: Option<f64>, eval: bool) -> Self {
        MetricsRow {
            epoch,
            episode,
            successes: m.successes,
            collisions: m.collisions,
            silent: m.silent,
            total_reward: m.total_reward,
            success_rate: m.success_rate,
            oracle_bound: m.oracle_bound,
            epsilon: m.epsilon,
            mean_loss,
            eval: u8::from(eval),
        }
    }

    pub fn is_eval(&self) -> bool {
        self.eval != 0
    }
}

pub fn write_metrics<W: Write>(writer: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    let io = |e: csv::Error| Error::Data(format!("cannot write metrics: {e}"));
    w.write_record(METRICS_HEADER).map_err(io)?;
    for row in rows {
        w.serialize(row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("cannot write metrics", e))
}

pub fn read_metrics<R: Read>(reader: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = r
        .headers()
        .map_err(|e| Error::Data(format!("metrics line 1: {e}")))?
        .clone();
    if header.iter().ne(METRICS_HEADER) {
        return data(format!("metrics line 1: unexpected header {:?}", header.iter().collect::<Vec<_>>()));
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            let row: MetricsRow = row.map_err(|e| Error::Data(format!("metrics line {}: {e}", i + 2)))?;
            if !(0.0..=1.0).contains(&row.success_rate) {
                return data(format!("metrics line {}: success_rate out of range", i + 2));
            }
            Ok(row)
        })
        .collect()
}

pub fn load_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(format!("cannot open {}", path.display()), e))?;
    read_metrics(std::io::BufReader::new(f))
}

pub fn save_metrics(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(format!("cannot create {}", path.display()), e))?;
    write_metrics(std::io::BufWriter::new(f), rows)
}
