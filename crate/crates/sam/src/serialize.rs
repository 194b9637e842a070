//! "SAMW" memory dumps.
//!
//! Layout: magic `SAMW`, version byte, four u32 LE dimensions
//! (c, ℓ, c', ℓ'), u32 LE stored count, then the matrix packed 8 cells per
//! byte, row-major, least-significant bit first.

use crate::memory::HeteroMemory;
use crate::{Result, SamError};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MEMORY_MAGIC: &[u8; 4] = b"SAMW";
const VERSION: u8 = 1;

impl HeteroMemory {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MEMORY_MAGIC)?;
        w.write_all(&[VERSION])?;
        for dim in [
            self.in_clusters(),
            self.in_cluster_size(),
            self.out_clusters(),
            self.out_cluster_size(),
        ] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        w.write_all(&self.stored_count().to_le_bytes())?;
        let cells = self.matrix();
        let mut byte = 0u8;
        for (i, &cell) in cells.iter().enumerate() {
            byte |= cell << (i % 8);
            if i % 8 == 7 {
                w.write_all(&[byte])?;
                byte = 0;
            }
        }
        if !cells.len().is_multiple_of(8) {
            w.write_all(&[byte])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MEMORY_MAGIC {
            return Err(SamError::BadFormat(format!(
                "bad magic {magic:?}, expected {MEMORY_MAGIC:?}"
            )));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version)?;
        if version[0] != VERSION {
            return Err(SamError::BadFormat(format!(
                "unsupported version {}",
                version[0]
            )));
        }
        let mut dims = [0usize; 4];
        let mut buf = [0u8; 4];
        for d in &mut dims {
            r.read_exact(&mut buf)?;
            *d = u32::from_le_bytes(buf) as usize;
        }
        r.read_exact(&mut buf)?;
        let stored_count = u32::from_le_bytes(buf);
        let n_cells = dims[0] * dims[1] * dims[2] * dims[3];
        let mut packed = vec![0u8; n_cells.div_ceil(8)];
        r.read_exact(&mut packed)?;
        let mut trailing = Vec::new();
        r.read_to_end(&mut trailing)?;
        if !trailing.is_empty() {
            return Err(SamError::BadFormat(format!(
                "{} trailing bytes",
                trailing.len()
            )));
        }
        let cells: Vec<u8> = (0..n_cells)
            .map(|i| (packed[i / 8] >> (i % 8)) & 1)
            .collect();
        Self::from_parts(dims[0], dims[1], dims[2], dims[3], cells, stored_count)
    }
}
