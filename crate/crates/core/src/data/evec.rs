use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::{EmbeddingRecord, EmbeddingSet};

pub const EVEC_MAGIC: [u8; 4] = *b"EVEC";
pub const EVEC_VERSION: u8 = 1;
const HEADER_LEN: u64 = 4 + 1 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Binary,
    Tsv,
}

impl EmbeddingFormat {
    /// `.tsv`/`.txt` files are TSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("txt") => EmbeddingFormat::Tsv,
            _ => EmbeddingFormat::Binary,
        }
    }
}

impl FromStr for EmbeddingFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "evec" => Ok(EmbeddingFormat::Binary),
            "tsv" => Ok(EmbeddingFormat::Tsv),
            _ => Err(Error::invalid(format!("unknown embedding format {s:?} (binary|tsv)"))),
        }
    }
}

pub fn read_embeddings(path: impl AsRef<Path>, format: EmbeddingFormat) -> Result<EmbeddingSet> {
    let file = BufReader::new(File::open(path)?);
    match format {
        EmbeddingFormat::Binary => read_evec(file),
        EmbeddingFormat::Tsv => read_tsv_embeddings(file),
    }
}

pub fn write_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>, format: EmbeddingFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        EmbeddingFormat::Binary => write_evec(set, &mut w)?,
        EmbeddingFormat::Tsv => write_tsv_embeddings(set, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

/// Exact byte size of the binary encoding of `set`.
pub fn evec_file_size(set: &EmbeddingSet) -> u64 {
    let per_vector = 4 * set.dim() as u64;
    HEADER_LEN
        + set
            .iter()
            .map(|r| 2 + r.id.len() as u64 + 4 + 2 + r.domain.as_deref().map_or(0, str::len) as u64 + per_vector)
            .sum::<u64>()
}

pub fn write_evec<W: Write>(set: &EmbeddingSet, w: &mut W) -> Result<()> {
    let dim = u32::try_from(set.dim()).map_err(|_| Error::invalid("dimension exceeds u32"))?;
    w.write_all(&EVEC_MAGIC)?;
    w.write_all(&[EVEC_VERSION])?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&(set.len() as u64).to_le_bytes())?;
    for r in set {
        write_str16(w, &r.id)?;
        w.write_all(&(r.duration_s as f32).to_le_bytes())?;
        write_str16(w, r.domain.as_deref().unwrap_or(""))?;
        for &x in &r.vector {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn write_str16<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::invalid(format!("string longer than 65535 bytes: {s:.32}...")))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

/// Reads the binary format. Any structural problem rejects the whole file,
/// naming the offending record (1-based).
pub fn read_evec<R: Read>(mut r: R) -> Result<EmbeddingSet> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "header")?;
    if magic != EVEC_MAGIC {
        return Err(Error::malformed("header", format!("bad magic {magic:02x?}")));
    }
    let mut version = [0u8; 1];
    read_exact(&mut r, &mut version, "header")?;
    if version[0] != EVEC_VERSION {
        return Err(Error::malformed("header", format!("unsupported version {}", version[0])));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    read_exact(&mut r, &mut b4, "header")?;
    let dim = u32::from_le_bytes(b4) as usize;
    read_exact(&mut r, &mut b8, "header")?;
    let count = u64::from_le_bytes(b8);

    let mut set = EmbeddingSet::new(dim);
    let mut raw = vec![0u8; 4 * dim];
    for n in 1..=count {
        let loc = format!("record {n}");
        let id = read_str16(&mut r, &loc)?;
        read_exact(&mut r, &mut b4, &loc)?;
        let duration = f32::from_le_bytes(b4) as f64;
        let domain = read_str16(&mut r, &loc)?;
        read_exact(&mut r, &mut raw, &loc)?;
        let vector = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        set.push(EmbeddingRecord::new(id, vector, duration).with_domain(domain))?;
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::malformed("trailer", "unexpected bytes after last record"));
    }
    Ok(set)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], loc: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::malformed(loc, "truncated"),
        _ => Error::Io(e),
    })
}

fn read_str16<R: Read>(r: &mut R, loc: &str) -> Result<String> {
    let mut b2 = [0u8; 2];
    read_exact(r, &mut b2, loc)?;
    let mut bytes = vec![0u8; u16::from_le_bytes(b2) as usize];
    read_exact(r, &mut bytes, loc)?;
    String::from_utf8(bytes).map_err(|_| Error::malformed(loc, "invalid UTF-8"))
}

/// `id<TAB>duration_s<TAB>domain<TAB>c1,c2,...,cd`. Values are written with
/// the shortest decimal that reproduces the stored `f32`.
pub fn write_tsv_embeddings<W: Write>(set: &EmbeddingSet, w: &mut W) -> Result<()> {
    for r in set {
        let comps = r
            .vector
            .iter()
            .map(|&x| (x as f32).to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            r.id,
            r.duration_s as f32,
            r.domain.as_deref().unwrap_or(""),
            comps
        )?;
    }
    Ok(())
}

/// TSV counterpart of [`read_evec`]. The dimension is taken from the first
/// record (0 for an empty file).
pub fn read_tsv_embeddings<R: BufRead>(r: R) -> Result<EmbeddingSet> {
    let mut set: Option<EmbeddingSet> = None;
    let mut n = 0usize;
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        n += 1;
        let loc = format!("record {n}");
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::malformed(loc, format!("expected 4 columns, found {}", cols.len())));
        }
        let duration = parse_f32(cols[1], &loc)?;
        let vector = if cols[3].is_empty() {
            Vec::new()
        } else {
            cols[3]
                .split(',')
                .map(|c| parse_f32(c, &loc))
                .collect::<Result<Vec<f64>>>()?
        };
        let set = set.get_or_insert_with(|| EmbeddingSet::new(vector.len()));
        if vector.len() != set.dim() {
            return Err(Error::malformed(
                loc,
                format!("dimension {} does not match set dimension {}", vector.len(), set.dim()),
            ));
        }
        set.push(EmbeddingRecord::new(cols[0], vector, duration).with_domain(cols[2]))?;
    }
    Ok(set.unwrap_or_else(|| EmbeddingSet::new(0)))
}

fn parse_f32(s: &str, loc: &str) -> Result<f64> {
    s.trim()
        .parse::<f32>()
        .map(|x| x as f64)
        .map_err(|_| Error::malformed(loc, format!("bad number {s:?}")))
}
