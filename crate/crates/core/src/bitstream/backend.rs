use crate::entropy::{CdfTable, FREQ_TOTAL};

pub const STATUS_OK: i32 = 0;
pub const STATUS_INVALID_ARGUMENT: i32 = -1;
pub const STATUS_OUT_OF_RANGE: i32 = -2;
pub const STATUS_CORRUPT: i32 = -3;
pub const STATUS_CAPACITY: i32 = -4;

/// Buffer-only interface to an entropy coder.
///
/// `table_data` holds one record per symbol, `[symbol_min, n, cum_freq[0..=n]]`,
/// as written by [`CdfTable::append_table_data`]; `symbol_min` is stored as
/// the two's-complement bits of an `i32`. Both calls return 0 on success or
/// one of the negative `STATUS_*` codes. On failure `decode` leaves the
/// number of symbols it did recover in `decoded`.
pub trait RangeCoderBackend {
    fn encode(&self, symbols: &[i32], table_data: &[u32], out: &mut Vec<u8>) -> i32;
    fn decode(&self, bytes: &[u8], table_data: &[u32], count: usize, out: &mut [i32], decoded: &mut usize) -> i32;
}

/// Walks the per-symbol records of a `table_data` buffer.
#[derive(Debug, Clone)]
pub struct TableRecords<'a> {
    data: &'a [u32],
}

impl<'a> TableRecords<'a> {
    pub fn new(data: &'a [u32]) -> Self {
        Self { data }
    }
}

/// One record: `(symbol_min, cum_freq)`. `None` marks a malformed record.
pub type TableRecord<'a> = Option<(i32, &'a [u32])>;

impl<'a> Iterator for TableRecords<'a> {
    type Item = TableRecord<'a>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.data.is_empty() {
            return None;
        }
        let parsed = (|| {
            let (&min, rest) = self.data.split_first()?;
            let (&n, rest) = rest.split_first()?;
            let n = n as usize;
            if n == 0 || n > FREQ_TOTAL as usize || rest.len() < n + 1 {
                return None;
            }
            let cum = &rest[..=n];
            let valid = cum[0] == 0 && cum[n] == FREQ_TOTAL && cum.windows(2).all(|w| w[0] < w[1]);
            valid.then_some((min as i32, cum, n + 3))
        })();
        match parsed {
            Some((min, cum, used)) => {
                self.data = &self.data[used..];
                Some(Some((min, cum)))
            }
            None => {
                self.data = &[];
                Some(None)
            }
        }
    }
}

/// Builds a `table_data` buffer from per-symbol tables.
pub fn table_data<'a>(tables: impl IntoIterator<Item = &'a CdfTable>) -> Vec<u32> {
    let mut out = Vec::new();
    for t in tables {
        t.append_table_data(&mut out);
    }
    out
}

/// Uncompressed stand-in coder: each symbol is stored as its big-endian
/// 16-bit index into its table. Used when no range coder is linked and as
/// a test double for the boundary contract.
#[derive(Debug, Clone, Copy, Default)]
pub struct StoredBackend;

impl RangeCoderBackend for StoredBackend {
    fn encode(&self, symbols: &[i32], table_data: &[u32], out: &mut Vec<u8>) -> i32 {
        let mut records = TableRecords::new(table_data);
        let mut staged = Vec::with_capacity(symbols.len() * 2);
        for &s in symbols {
            let Some(Some((min, cum))) = records.next() else {
                return STATUS_INVALID_ARGUMENT;
            };
            let index = s as i64 - min as i64;
            if index < 0 || index >= (cum.len() - 1) as i64 {
                return STATUS_OUT_OF_RANGE;
            }
            staged.extend_from_slice(&(index as u16).to_be_bytes());
        }
        if records.next().is_some() {
            return STATUS_INVALID_ARGUMENT;
        }
        out.extend_from_slice(&staged);
        STATUS_OK
    }

    fn decode(&self, bytes: &[u8], table_data: &[u32], count: usize, out: &mut [i32], decoded: &mut usize) -> i32 {
        *decoded = 0;
        if out.len() < count {
            return STATUS_CAPACITY;
        }
        let mut records = TableRecords::new(table_data);
        for i in 0..count {
            let Some(Some((min, cum))) = records.next() else {
                return STATUS_INVALID_ARGUMENT;
            };
            let Some(pair) = bytes.get(2 * i..2 * i + 2) else {
                return STATUS_CORRUPT;
            };
            let index = u16::from_be_bytes([pair[0], pair[1]]) as usize;
            if index >= cum.len() - 1 {
                return STATUS_CORRUPT;
            }
            out[i] = min + index as i32;
            *decoded = i + 1;
        }
        if bytes.len() != 2 * count {
            return STATUS_CORRUPT;
        }
        STATUS_OK
    }
}
