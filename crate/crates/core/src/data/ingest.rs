use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column layout of a delimiter-separated interaction file.
///
/// Without a header row, columns are addressed by zero-based index written
/// as a string (`"0"`, `"1"`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputFormat {
    pub delimiter: char,
    pub has_header: bool,
    pub user_col: String,
    pub item_col: String,
    pub timestamp_col: String,
}

impl Default for InputFormat {
    fn default() -> Self {
        Self {
            delimiter: ',',
            has_header: true,
            user_col: "user".into(),
            item_col: "item".into(),
            timestamp_col: "ts".into(),
        }
    }
}

impl InputFormat {
    /// Layout of the MovieLens `ratings.csv` files.
    pub fn movielens() -> Self {
        Self {
            delimiter: ',',
            has_header: true,
            user_col: "userId".into(),
            item_col: "movieId".into(),
            timestamp_col: "timestamp".into(),
        }
    }
}

/// Insertion-ordered string table; ids are first-appearance indices.
#[derive(Debug, Clone, Default)]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// One interaction. `user` and `item` index into the interners of the
/// owning [`RawEvents`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawEvent {
    pub user: u32,
    pub item: u32,
    pub timestamp: i64,
}

/// Ingested events in file order, with the raw-id string tables.
#[derive(Debug, Clone, Default)]
pub struct RawEvents {
    pub users: Interner,
    pub items: Interner,
    pub events: Vec<RawEvent>,
}

impl RawEvents {
    pub fn push(&mut self, user: &str, item: &str, timestamp: i64) {
        let user = self.users.intern(user);
        let item = self.items.intern(item);
        self.events.push(RawEvent { user, item, timestamp });
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

pub fn ingest(path: impl AsRef<Path>, format: &InputFormat) -> Result<RawEvents> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(std::io::BufReader::with_capacity(1 << 20, file), format)
}

pub fn ingest_reader<R: Read>(reader: R, format: &InputFormat) -> Result<RawEvents> {
    if !format.delimiter.is_ascii() {
        return Err(Error::config("dataset.delimiter", "must be a single ASCII character"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(format.delimiter as u8)
        .has_headers(format.has_header)
        .flexible(true)
        .from_reader(reader);

    let (user_idx, item_idx, ts_idx) = if format.has_header {
        let header = rdr.byte_headers()?.clone();
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h == name.as_bytes())
                .ok_or_else(|| Error::MissingColumn(name.to_owned()))
        };
        (find(&format.user_col)?, find(&format.item_col)?, find(&format.timestamp_col)?)
    } else {
        let parse = |name: &str| {
            name.parse::<usize>().map_err(|_| Error::MissingColumn(name.to_owned()))
        };
        (parse(&format.user_col)?, parse(&format.item_col)?, parse(&format.timestamp_col)?)
    };

    let mut out = RawEvents::default();
    let mut record = csv::ByteRecord::new();
    let mut row = 0usize;
    while rdr.read_byte_record(&mut record)? {
        row += 1;
        let field = |idx: usize, col: &str| -> Result<&str> {
            let raw = record.get(idx).ok_or_else(|| Error::BadRow {
                row,
                message: format!("no value for column `{col}`"),
            })?;
            std::str::from_utf8(raw)
                .map(str::trim)
                .map_err(|_| Error::BadRow { row, message: format!("column `{col}` is not UTF-8") })
        };
        let user = field(user_idx, &format.user_col)?;
        let item = field(item_idx, &format.item_col)?;
        let ts_raw = field(ts_idx, &format.timestamp_col)?;
        let timestamp = ts_raw
            .parse::<i64>()
            .map_err(|_| Error::BadTimestamp { row, value: ts_raw.to_owned() })?;
        out.push(user, item, timestamp);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_rows_in_file_order() {
        let csv = "user,item,ts\nu1,a,3\nu2,b,1\nu1,c,2\n";
        let ev = ingest_reader(csv.as_bytes(), &InputFormat::default()).unwrap();
        assert_eq!(ev.len(), 3);
        let rows: Vec<_> = ev
            .events
            .iter()
            .map(|e| (ev.users.name(e.user), ev.items.name(e.item), e.timestamp))
            .collect();
        assert_eq!(rows, vec![("u1", "a", 3), ("u2", "b", 1), ("u1", "c", 2)]);
    }

    #[test]
    fn missing_timestamp_column() {
        let csv = "user,item\nu1,a\n";
        let err = ingest_reader(csv.as_bytes(), &InputFormat::default()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "ts"), "{err}");
    }

    #[test]
    fn bad_timestamp_names_row() {
        let csv = "user,item,ts\nu1,a,1\nu1,b,yesterday\n";
        let err = ingest_reader(csv.as_bytes(), &InputFormat::default()).unwrap_err();
        assert!(matches!(err, Error::BadTimestamp { row: 2, .. }), "{err}");
    }

    #[test]
    fn headerless_tab_separated() {
        let fmt = InputFormat {
            delimiter: '\t',
            has_header: false,
            user_col: "0".into(),
            item_col: "2".into(),
            timestamp_col: "1".into(),
        };
        let tsv = "u1\t10\tx\nu1\t11\ty\n";
        let ev = ingest_reader(tsv.as_bytes(), &fmt).unwrap();
        assert_eq!(ev.items.name(ev.events[1].item), "y");
        assert_eq!(ev.events[1].timestamp, 11);
    }
}
