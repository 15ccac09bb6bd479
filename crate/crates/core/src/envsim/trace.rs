//! Recorded channel occupancy.
//!
//! CSV layout (UTF-8, LF, no quoting): header `slot,ch1,...,chK`, then one row per slot
//! holding the slot number followed by `K` entries, `1` idle and `0` busy.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::channels::ChannelStateVector;
use crate::error::{config, data, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    num_channels: usize,
    rows: Vec<ChannelStateVector>,
    cursor: usize,
}

impl TraceTable {
    pub fn new(num_channels: usize, rows: Vec<ChannelStateVector>) -> Result<Self> {
        if num_channels == 0 {
            return config("trace needs at least one channel");
        }
        if rows.is_empty() {
            return data("trace has no rows");
        }
        if let Some(i) = rows.iter().position(|r| r.len() != num_channels) {
            return data(format!("trace row {} has {} channels", i + 1, rows[i].len()));
        }
        Ok(TraceTable {
            num_channels,
            rows,
            cursor: 0,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn num_slots(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[ChannelStateVector] {
        &self.rows
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.rows.len() - self.cursor
    }

    pub fn set_cursor(&mut self, cursor: usize) -> Result<()> {
        if cursor > self.rows.len() {
            return data(format!("trace cursor {cursor} beyond {} rows", self.rows.len()));
        }
        self.cursor = cursor;
        Ok(())
    }

    pub fn rewind(&mut self) {
        self.cursor = 0;
    }

    pub(crate) fn next_row(&mut self) -> Result<ChannelStateVector> {
        let row = self
            .rows
            .get(self.cursor)
            .cloned()
            .ok_or_else(|| Error::Data(format!("trace exhausted after {} slots", self.rows.len())))?;
        self.cursor += 1;
        Ok(row)
    }

    pub fn from_reader<R: Read>(reader: R, num_channels: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .quoting(false)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Data(format!("trace header: {e}")))?
            .clone();
        let expected: Vec<String> = std::iter::once("slot".to_string())
            .chain((1..=num_channels).map(|k| format!("ch{k}")))
            .collect();
        if headers.iter().ne(expected.iter().map(String::as_str)) {
            return data(format!(
                "trace header must be `{}` for {num_channels} channels",
                expected.join(",")
            ));
        }
        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let row_no = i + 1;
            let record = record.map_err(|e| Error::Data(format!("trace row {row_no}: {e}")))?;
            if record.len() != num_channels + 1 {
                return data(format!(
                    "trace row {row_no}: expected {} columns, found {}",
                    num_channels + 1,
                    record.len()
                ));
            }
            let mut states = Vec::with_capacity(num_channels);
            for field in record.iter().skip(1) {
                match field.trim() {
                    "0" => states.push(0),
                    "1" => states.push(1),
                    other => {
                        return data(format!(
                            "trace row {row_no}: entry {other:?} is not 0 or 1"
                        ))
                    }
                }
            }
            rows.push(ChannelStateVector::new(states)?);
        }
        Self::new(num_channels, rows)
    }

    pub fn write_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .quote_style(csv::QuoteStyle::Never)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let to_err = |e: csv::Error| Error::Data(format!("writing trace: {e}"));
        let header: Vec<String> = std::iter::once("slot".to_string())
            .chain((1..=self.num_channels).map(|k| format!("ch{k}")))
            .collect();
        wtr.write_record(&header).map_err(to_err)?;
        for (t, row) in self.rows.iter().enumerate() {
            let rec: Vec<String> = std::iter::once((t + 1).to_string())
                .chain(row.as_slice().iter().map(|s| s.to_string()))
                .collect();
            wtr.write_record(&rec).map_err(to_err)?;
        }
        wtr.flush().map_err(|e| Error::io("writing trace", e))
    }
}

pub fn load_trace(path: impl AsRef<Path>, num_channels: usize) -> Result<TraceTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    TraceTable::from_reader(std::io::BufReader::new(file), num_channels)
}

pub fn write_trace(path: impl AsRef<Path>, table: &TraceTable) -> Result<()> {
    let path = path.as_ref();
    let file =
        File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    table.write_to(std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text(rows: &[&str], k: usize) -> String {
        let mut s = String::from("slot");
        for c in 1..=k {
            s.push_str(&format!(",ch{c}"));
        }
        s.push('\n');
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn loads_valid_rows() {
        let rows: Vec<String> = (1..=100).map(|t| format!("{t},{},{},1", t % 2, 1 - t % 2)).collect();
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let table = TraceTable::from_reader(text(&refs, 3).as_bytes(), 3).unwrap();
        assert_eq!(table.num_slots(), 100);
        assert_eq!(table.rows()[0].as_slice(), &[1, 0, 1]);
    }

    #[test]
    fn non_binary_entry_cites_row() {
        let rows: Vec<String> = (1..=10)
            .map(|t| if t == 7 { format!("{t},0,2") } else { format!("{t},0,1") })
            .collect();
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let err = TraceTable::from_reader(text(&refs, 2).as_bytes(), 2).unwrap_err();
        assert_eq!(err.category(), crate::Category::Data);
        assert!(err.to_string().contains("row 7"), "{err}");
    }

    #[test]
    fn wrong_column_count_and_header_rejected() {
        let err = TraceTable::from_reader(text(&["1,0,1,1"], 2).as_bytes(), 2).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        let err = TraceTable::from_reader("slot,a,b\n1,0,1\n".as_bytes(), 2).unwrap_err();
        assert_eq!(err.category(), crate::Category::Data);
    }

    #[test]
    fn exhaustion_is_data_error() {
        let mut t = TraceTable::from_reader(text(&["1,1", "2,0"], 1).as_bytes(), 1).unwrap();
        assert!(t.next_row().is_ok());
        assert!(t.next_row().is_ok());
        assert_eq!(t.next_row().unwrap_err().category(), crate::Category::Data);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let rows = (0..25)
            .map(|t| ChannelStateVector::from_idle((0..4).map(|k| (t * 7 + k * 3) % 5 < 2)))
            .collect();
        let table = TraceTable::new(4, rows).unwrap();
        write_trace(&path, &table).unwrap();
        let back = load_trace(&path, 4).unwrap();
        assert_eq!(back, table);
        let raw = std::fs::read_to_string(&path).unwrap();
        assert!(raw.starts_with("slot,ch1,ch2,ch3,ch4\n1,"));
    }
}
