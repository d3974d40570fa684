//! CSV readers for sensor metadata and reading streams.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use neighborfl_core::geo::{DeviceId, GeoError, GpsCoord, SensorRegistry};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("metadata row {row}: {source}")]
    Coordinate {
        row: usize,
        #[source]
        source: GeoError,
    },
    #[error("stream has no column for device `{0}`")]
    MissingDevice(DeviceId),
    #[error("stream header must start with `timestamp`, found `{0}`")]
    Header(String),
    #[error("stream has no usable rows")]
    Empty,
}

#[derive(Deserialize)]
struct MetadataRow {
    device_id: String,
    lat: f64,
    lon: f64,
}

pub fn read_metadata(reader: impl Read) -> Result<SensorRegistry, IngestError> {
    let mut registry = SensorRegistry::new();
    for (idx, row) in csv::Reader::from_reader(reader).deserialize::<MetadataRow>().enumerate() {
        let row = row?;
        let coord = GpsCoord::new(row.lat, row.lon).map_err(|source| IngestError::Coordinate { row: idx + 1, source })?;
        registry.insert(row.device_id, coord).map_err(|source| IngestError::Coordinate { row: idx + 1, source })?;
    }
    Ok(registry)
}

pub fn read_metadata_file(path: &Path) -> Result<SensorRegistry, IngestError> {
    read_metadata(open(path)?)
}

/// Readings of the requested devices, one value per kept row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StreamTable {
    pub timestamps: Vec<String>,
    pub columns: HashMap<DeviceId, Vec<f64>>,
    /// Rows dropped for a missing or non-numeric reading.
    pub skipped: usize,
}

impl StreamTable {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

/// Reads the columns of `devices`; other columns are ignored. A row with a
/// blank, unparsable or non-finite reading for any requested device is
/// dropped as a whole so all devices stay on the same time steps.
pub fn read_stream<'a>(reader: impl Read, devices: impl IntoIterator<Item = &'a DeviceId>) -> Result<StreamTable, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    match headers.get(0) {
        Some(h) if h.trim() == "timestamp" => {}
        other => return Err(IngestError::Header(other.unwrap_or("").to_owned())),
    }
    let mut wanted = Vec::new();
    for id in devices {
        let col = headers.iter().position(|h| h.trim() == id.as_str()).ok_or_else(|| IngestError::MissingDevice(id.clone()))?;
        wanted.push((id.clone(), col));
    }
    let mut table = StreamTable { columns: wanted.iter().map(|(id, _)| (id.clone(), Vec::new())).collect(), ..Default::default() };
    let mut row_values = Vec::with_capacity(wanted.len());
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        row_values.clear();
        let mut bad = None;
        for (id, col) in &wanted {
            match record.get(*col).map(str::trim).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite()) {
                Some(v) => row_values.push(v),
                None => {
                    bad = Some(id);
                    break;
                }
            }
        }
        if let Some(id) = bad {
            log::warn!("stream row {}: missing or invalid reading for `{id}`, row skipped", line + 2);
            table.skipped += 1;
            continue;
        }
        table.timestamps.push(record.get(0).unwrap_or("").to_owned());
        for ((id, _), v) in wanted.iter().zip(&row_values) {
            table.columns.get_mut(id).expect("column initialized").push(*v);
        }
    }
    if table.is_empty() {
        return Err(IngestError::Empty);
    }
    Ok(table)
}

pub fn read_stream_file<'a>(path: &Path, devices: impl IntoIterator<Item = &'a DeviceId>) -> Result<StreamTable, IngestError> {
    read_stream(open(path)?, devices)
}

fn open(path: &Path) -> Result<std::fs::File, IngestError> {
    std::fs::File::open(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metadata_rows() {
        let csv = "device_id,lat,lon\na,37.1,-121.9\nb,37.2,-121.8\n";
        let r = read_metadata(csv.as_bytes()).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r.ids().map(|d| d.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
        let bad = "device_id,lat,lon\na,97.0,0\n";
        assert!(matches!(read_metadata(bad.as_bytes()), Err(IngestError::Coordinate { row: 1, .. })));
        let dup = "device_id,lat,lon\na,1,1\na,2,2\n";
        assert!(read_metadata(dup.as_bytes()).is_err());
    }

    #[test]
    fn stream_columns_by_id() {
        let csv = "timestamp,b,a,c\nt1,1,10,x\nt2,2,20,y\n";
        let ids = [DeviceId::new("a"), DeviceId::new("b")];
        let t = read_stream(csv.as_bytes(), &ids).unwrap();
        assert_eq!(t.columns[&ids[0]], vec![10.0, 20.0]);
        assert_eq!(t.columns[&ids[1]], vec![1.0, 2.0]);
        assert_eq!(t.timestamps, vec!["t1", "t2"]);
    }

    #[test]
    fn bad_rows_are_skipped() {
        let csv = "timestamp,a\nt1,1\nt2,\nt3,NaN\nt4,oops\nt5,5\n";
        let ids = [DeviceId::new("a")];
        let t = read_stream(csv.as_bytes(), &ids).unwrap();
        assert_eq!(t.columns[&ids[0]], vec![1.0, 5.0]);
        assert_eq!(t.skipped, 3);
    }

    #[test]
    fn missing_column_names_the_device() {
        let csv = "timestamp,a\nt1,1\n";
        let ids = [DeviceId::new("a"), DeviceId::new("400760_N")];
        let err = read_stream(csv.as_bytes(), &ids).unwrap_err();
        assert!(err.to_string().contains("400760_N"));
        assert!(matches!(read_stream("time,a\n".as_bytes(), &ids[..1]), Err(IngestError::Header(_))));
    }
}
