//! Mapping file formats.
//!
//! Binary (`SNMAP1`), all integers and floats little-endian:
//!
//! ```text
//! magic      6 bytes  "SNMAP1"
//! split      u8       0 = all, 1 = train, 2 = val
//! provenance u8       0 = synthetic, 1 = extracted
//! id_len     u32      byte length of layer_id
//! layer_id   id_len bytes, UTF-8
//! count      u64
//! x          count x f64
//! y_pre      count x f64
//! crc32      u32      CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! CSV (any path ending in `.csv`): `#`-prefixed `key=value` metadata lines
//! for `layer_id`, `split` and `provenance`, the header `x,y_pre`, then one
//! row per point with shortest round-trip decimals.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DatasetError, MappingDataset, Provenance, SplitTag};

pub const MAGIC: &[u8; 6] = b"SNMAP1";

fn split_code(s: SplitTag) -> u8 {
    match s {
        SplitTag::All => 0,
        SplitTag::Train => 1,
        SplitTag::Val => 2,
    }
}

fn provenance_code(p: Provenance) -> u8 {
    match p {
        Provenance::Synthetic => 0,
        Provenance::Extracted => 1,
    }
}

fn split_name(s: SplitTag) -> &'static str {
    match s {
        SplitTag::All => "all",
        SplitTag::Train => "train",
        SplitTag::Val => "val",
    }
}

fn provenance_name(p: Provenance) -> &'static str {
    match p {
        Provenance::Synthetic => "synthetic",
        Provenance::Extracted => "extracted",
    }
}

fn malformed(msg: impl Into<String>) -> DatasetError {
    DatasetError::Malformed(msg.into())
}

pub(crate) fn encode_binary(ds: &MappingDataset) -> Vec<u8> {
    let id = ds.layer_id.as_bytes();
    let n = ds.len();
    let mut buf = Vec::with_capacity(6 + 2 + 4 + id.len() + 8 + 16 * n + 4);
    buf.extend_from_slice(MAGIC);
    buf.push(split_code(ds.split));
    buf.push(provenance_code(ds.provenance));
    buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
    buf.extend_from_slice(id);
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    for v in ds.inputs().iter().chain(ds.targets()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DatasetError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| malformed(format!("truncated while reading {what}")))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8, DatasetError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, DatasetError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64_column(&mut self, n: usize, what: &str) -> Result<Vec<f64>, DatasetError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| malformed("count overflow"))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub(crate) fn decode_binary(buf: &[u8]) -> Result<MappingDataset, DatasetError> {
    if buf.len() < MAGIC.len() + 4 || &buf[..MAGIC.len()] != MAGIC {
        return Err(malformed("missing SNMAP1 magic"));
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(DatasetError::Checksum { stored, computed });
    }
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len(),
    };
    let split = match r.u8("split")? {
        0 => SplitTag::All,
        1 => SplitTag::Train,
        2 => SplitTag::Val,
        c => return Err(malformed(format!("unknown split code {c}"))),
    };
    let provenance = match r.u8("provenance")? {
        0 => Provenance::Synthetic,
        1 => Provenance::Extracted,
        c => return Err(malformed(format!("unknown provenance code {c}"))),
    };
    let id_len = r.u32("layer id length")? as usize;
    let layer_id = std::str::from_utf8(r.take(id_len, "layer id")?)
        .map_err(|_| malformed("layer id is not UTF-8"))?
        .to_string();
    let count = usize::try_from(r.u64("count")?).map_err(|_| malformed("count overflow"))?;
    let xs = r.f64_column(count, "x column")?;
    let ys = r.f64_column(count, "y_pre column")?;
    if r.pos != body.len() {
        return Err(malformed(format!("{} trailing bytes", body.len() - r.pos)));
    }
    MappingDataset::new(layer_id, xs, ys, split, provenance)
}

pub(crate) fn encode_csv(ds: &MappingDataset) -> String {
    let mut out = String::with_capacity(48 * ds.len() + 96);
    out.push_str(&format!("# layer_id={}\n", ds.layer_id));
    out.push_str(&format!("# split={}\n", split_name(ds.split)));
    out.push_str(&format!("# provenance={}\n", provenance_name(ds.provenance)));
    out.push_str("x,y_pre\n");
    for (x, y) in ds.inputs().iter().zip(ds.targets()) {
        out.push_str(&format!("{x:?},{y:?}\n"));
    }
    out
}

pub(crate) fn decode_csv(text: &str) -> Result<MappingDataset, DatasetError> {
    let mut layer_id = None;
    let mut split = SplitTag::All;
    let mut provenance = Provenance::Synthetic;
    let mut lines = text.lines();
    loop {
        let line = lines.next().ok_or_else(|| malformed("missing x,y_pre header"))?;
        if let Some(meta) = line.strip_prefix('#') {
            let Some((key, value)) = meta.trim().split_once('=') else {
                continue;
            };
            match key.trim() {
                "layer_id" => layer_id = Some(value.trim().to_string()),
                "split" => {
                    split = match value.trim() {
                        "all" => SplitTag::All,
                        "train" => SplitTag::Train,
                        "val" => SplitTag::Val,
                        other => return Err(malformed(format!("unknown split {other:?}"))),
                    }
                }
                "provenance" => {
                    provenance = match value.trim() {
                        "synthetic" => Provenance::Synthetic,
                        "extracted" => Provenance::Extracted,
                        other => return Err(malformed(format!("unknown provenance {other:?}"))),
                    }
                }
                _ => {}
            }
            continue;
        }
        if line.trim() != "x,y_pre" {
            return Err(malformed(format!("expected header x,y_pre, found {line:?}")));
        }
        break;
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (x, y) = line
            .split_once(',')
            .ok_or_else(|| malformed(format!("row {row}: expected two columns")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| malformed(format!("row {row}: bad number {s:?}")))
        };
        let (x, y) = (parse(x)?, parse(y)?);
        if !(x.is_finite() && y.is_finite()) {
            return Err(DatasetError::NonFinite { row });
        }
        xs.push(x);
        ys.push(y);
    }
    let layer_id = layer_id.ok_or_else(|| malformed("missing layer_id metadata"))?;
    MappingDataset::new(layer_id, xs, ys, split, provenance)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Writes `.csv` paths as CSV and everything else as `SNMAP1`.
pub fn save_mappings(ds: &MappingDataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let bytes = if is_csv(path) {
        encode_csv(ds).into_bytes()
    } else {
        encode_binary(ds)
    };
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_mappings(path: impl AsRef<Path>) -> Result<MappingDataset, DatasetError> {
    let path = path.as_ref();
    if is_csv(path) {
        decode_csv(&fs::read_to_string(path)?)
    } else {
        decode_binary(&fs::read(path)?)
    }
}
