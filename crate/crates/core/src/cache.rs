//! In-memory and on-disk store of cell solutions.
//!
//! The binary layout is described in `docs/cache_format.md`; bump
//! [`FORMAT_VERSION`] on any change to it.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use thiserror::Error;

use crate::cell::CellSolution;
use crate::constitutive::FluxLaw;
use crate::grid::{Grid, ScalarField, Topology};
use crate::microstructure::Microstructure;

pub const MAGIC: &[u8; 8] = b"PLHCACHE";
pub const FORMAT_VERSION: u32 = 1;

pub const TAG_CELL: u8 = 1;
pub const TAG_DOMAIN: u8 = 2;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache io: {0}")]
    Io(#[from] io::Error),
    #[error("not a cache file (bad magic)")]
    Magic,
    #[error("cache format version {found}, expected {FORMAT_VERSION}")]
    Version { found: u32 },
    #[error("corrupt cache record: {0}")]
    Corrupt(String),
}

/// Identity of a cell solve: law, geometry, cell grid, tolerance and the
/// quantized macroscopic gradient.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    law: [u64; 4],
    micro: Vec<u64>,
    dim: u32,
    n: u32,
    tol: u64,
    xi: Vec<i64>,
}

fn micro_words(m: &Microstructure) -> Vec<u64> {
    match m {
        Microstructure::Homogeneous => vec![0],
        Microstructure::Layered { axis, lower, upper } => {
            vec![1, *axis as u64, lower.to_bits(), upper.to_bits()]
        }
        Microstructure::Dispersed { center, radius } => {
            let mut w = vec![2, center.len() as u64];
            w.extend(center.iter().map(|c| c.to_bits()));
            w.push(radius.to_bits());
            w
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheStats {
    pub entries: usize,
    pub loaded: usize,
    pub hits: u64,
    pub misses: u64,
}

/// Thread-safe map from [`CellKey`] to solutions. Concurrent duplicate
/// solves of one key are allowed; the last insert wins and both are equal.
#[derive(Debug, Default)]
pub struct CellCache {
    map: RwLock<HashMap<CellKey, Arc<CellSolution>>>,
    loaded: usize,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl CellCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn key(
        &self,
        law: &FluxLaw,
        micro: &Microstructure,
        grid: &Grid,
        tol: f64,
        xi: &[f64],
    ) -> CellKey {
        CellKey {
            law: [
                law.p1().to_bits(),
                law.p2().to_bits(),
                law.sigma1().to_bits(),
                law.sigma2().to_bits(),
            ],
            micro: micro_words(micro),
            dim: grid.dim() as u32,
            n: grid.n() as u32,
            tol: tol.to_bits(),
            xi: xi.iter().map(|&x| (x * 1e12).round() as i64).collect(),
        }
    }

    pub fn get(&self, key: &CellKey) -> Option<Arc<CellSolution>> {
        let hit = self.map.read().expect("cache lock").get(key).cloned();
        match hit {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        hit
    }

    pub fn insert(&self, key: CellKey, sol: Arc<CellSolution>) {
        self.map.write().expect("cache lock").insert(key, sol);
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            entries: self.len(),
            loaded: self.loaded,
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    /// Loads every cell record of `path` under a shared lock; a missing file
    /// yields an empty cache.
    pub fn load(path: &Path) -> Result<Self, CacheError> {
        let mut cache = Self::new();
        if !path.exists() {
            return Ok(cache);
        }
        let file = File::open(path)?;
        file.lock_shared()?;
        let records = read_records(&mut BufReader::new(&file));
        file.unlock()?;
        for rec in records? {
            if let Record::Cell(sol) = rec {
                let key = cache.key(&sol.law, &sol.micro, &sol.grid, sol_tol(&sol), &sol.xi);
                cache.insert(key, Arc::new(sol.solution));
            }
        }
        cache.loaded = cache.len();
        Ok(cache)
    }

    /// Writes all entries, sorted by key, under an exclusive lock.
    pub fn save(&self, path: &Path) -> Result<(), CacheError> {
        let map = self.map.read().expect("cache lock");
        let mut entries: Vec<(&CellKey, &Arc<CellSolution>)> = map.iter().collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        let file = File::options()
            .create(true)
            .write(true)
            .truncate(false)
            .open(path)?;
        file.lock()?;
        file.set_len(0)?;
        let mut w = BufWriter::new(&file);
        write_header(&mut w, entries.len() as u64)?;
        for (key, sol) in entries {
            write_cell_record(&mut w, sol, f64::from_bits(key.tol))?;
        }
        w.flush()?;
        drop(w);
        file.unlock()?;
        Ok(())
    }
}

/// A decoded cell record together with the tolerance it was solved at.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredCell {
    pub solution: CellSolution,
    pub tol: f64,
}

impl std::ops::Deref for StoredCell {
    type Target = CellSolution;
    fn deref(&self) -> &CellSolution {
        &self.solution
    }
}

fn sol_tol(s: &StoredCell) -> f64 {
    s.tol
}

/// Exported domain field (ε-problem or homogenized problem).
#[derive(Debug, Clone, PartialEq)]
pub struct DomainRecord {
    /// `None` for the homogenized solution.
    pub eps: Option<f64>,
    pub field: ScalarField,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Cell(StoredCell),
    Domain(DomainRecord),
}

fn w_u8(w: &mut impl Write, v: u8) -> io::Result<()> {
    w.write_all(&[v])
}
fn w_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}
fn w_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}
fn w_f64(w: &mut impl Write, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn r_u8(r: &mut impl Read) -> io::Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}
fn r_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
fn r_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
fn r_f64(r: &mut impl Read) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
fn r_f64s(r: &mut impl Read, n: usize) -> io::Result<Vec<f64>> {
    (0..n).map(|_| r_f64(r)).collect()
}

pub fn write_header(w: &mut impl Write, records: u64) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w_u32(w, FORMAT_VERSION)?;
    w_u64(w, records)
}

fn write_micro(w: &mut impl Write, m: &Microstructure) -> io::Result<()> {
    match m {
        Microstructure::Homogeneous => w_u8(w, 0),
        Microstructure::Layered { axis, lower, upper } => {
            w_u8(w, 1)?;
            w_u32(w, *axis as u32)?;
            w_f64(w, *lower)?;
            w_f64(w, *upper)
        }
        Microstructure::Dispersed { center, radius } => {
            w_u8(w, 2)?;
            w_u32(w, center.len() as u32)?;
            for c in center {
                w_f64(w, *c)?;
            }
            w_f64(w, *radius)
        }
    }
}

fn read_micro(r: &mut impl Read) -> Result<Microstructure, CacheError> {
    Ok(match r_u8(r)? {
        0 => Microstructure::Homogeneous,
        1 => Microstructure::Layered {
            axis: r_u32(r)? as usize,
            lower: r_f64(r)?,
            upper: r_f64(r)?,
        },
        2 => {
            let len = r_u32(r)? as usize;
            Microstructure::Dispersed {
                center: r_f64s(r, len)?,
                radius: r_f64(r)?,
            }
        }
        k => {
            return Err(CacheError::Corrupt(format!(
                "unknown microstructure kind {k}"
            )))
        }
    })
}

pub fn write_cell_record(w: &mut impl Write, sol: &CellSolution, tol: f64) -> io::Result<()> {
    w_u8(w, TAG_CELL)?;
    for v in [
        sol.law.p1(),
        sol.law.p2(),
        sol.law.sigma1(),
        sol.law.sigma2(),
    ] {
        w_f64(w, v)?;
    }
    write_micro(w, &sol.micro)?;
    w_u32(w, sol.grid.dim() as u32)?;
    w_u32(w, sol.grid.n() as u32)?;
    w_f64(w, tol)?;
    for x in &sol.xi {
        w_f64(w, *x)?;
    }
    w_u32(w, sol.iterations as u32)?;
    for v in sol.corrector.values() {
        w_f64(w, *v)?;
    }
    for v in &sol.b {
        w_f64(w, *v)?;
    }
    w_f64(w, sol.residual_norm)
}

pub fn write_domain_record(w: &mut impl Write, rec: &DomainRecord) -> io::Result<()> {
    let g = rec.field.grid();
    w_u8(w, TAG_DOMAIN)?;
    w_u8(w, if rec.eps.is_some() { 0 } else { 1 })?;
    w_f64(w, rec.eps.unwrap_or(0.0))?;
    w_u32(w, g.dim() as u32)?;
    w_u32(w, g.n() as u32)?;
    w_f64(w, g.side())?;
    w_u64(w, rec.field.values().len() as u64)?;
    for v in rec.field.values() {
        w_f64(w, *v)?;
    }
    w_f64(w, rec.residual_norm)
}

/// Writes a stand-alone file of domain records.
pub fn save_domain_records(path: &Path, records: &[DomainRecord]) -> Result<(), CacheError> {
    let file = File::create(path)?;
    file.lock()?;
    let mut w = BufWriter::new(&file);
    write_header(&mut w, records.len() as u64)?;
    for r in records {
        write_domain_record(&mut w, r)?;
    }
    w.flush()?;
    drop(w);
    file.unlock()?;
    Ok(())
}

fn read_cell_record(r: &mut impl Read) -> Result<StoredCell, CacheError> {
    let (p1, p2, s1, s2) = (r_f64(r)?, r_f64(r)?, r_f64(r)?, r_f64(r)?);
    let law = FluxLaw::new(p1, p2, s1, s2).map_err(|e| CacheError::Corrupt(e.to_string()))?;
    let micro = read_micro(r)?;
    let dim = r_u32(r)? as usize;
    let n = r_u32(r)? as usize;
    let tol = r_f64(r)?;
    let xi = r_f64s(r, dim)?;
    let iterations = r_u32(r)? as usize;
    let grid = Grid::new(dim, n, 1.0, Topology::Periodic)
        .map_err(|e| CacheError::Corrupt(e.to_string()))?;
    let values = r_f64s(r, grid.n_nodes())?;
    let stored_b = r_f64s(r, dim)?;
    let residual = r_f64(r)?;
    let corrector =
        ScalarField::new(grid, values).map_err(|e| CacheError::Corrupt(e.to_string()))?;
    let solution = CellSolution::from_corrector(law, micro, xi, corrector, residual, iterations);
    if solution
        .b
        .iter()
        .zip(&stored_b)
        .any(|(a, b)| a.to_bits() != b.to_bits())
    {
        return Err(CacheError::Corrupt(
            "stored b does not match the stored corrector".into(),
        ));
    }
    Ok(StoredCell { solution, tol })
}

fn read_domain_record(r: &mut impl Read) -> Result<DomainRecord, CacheError> {
    let kind = r_u8(r)?;
    let eps = r_f64(r)?;
    let dim = r_u32(r)? as usize;
    let n = r_u32(r)? as usize;
    let side = r_f64(r)?;
    let len = r_u64(r)? as usize;
    let grid = Grid::new(dim, n, side, Topology::Dirichlet)
        .map_err(|e| CacheError::Corrupt(e.to_string()))?;
    if len != grid.n_nodes() {
        return Err(CacheError::Corrupt(format!(
            "domain record holds {len} values, grid has {}",
            grid.n_nodes()
        )));
    }
    let values = r_f64s(r, len)?;
    let residual_norm = r_f64(r)?;
    Ok(DomainRecord {
        eps: if kind == 0 { Some(eps) } else { None },
        field: ScalarField::new(grid, values).map_err(|e| CacheError::Corrupt(e.to_string()))?,
        residual_norm,
    })
}

pub fn read_records(r: &mut impl Read) -> Result<Vec<Record>, CacheError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CacheError::Magic);
    }
    let found = r_u32(r)?;
    if found != FORMAT_VERSION {
        return Err(CacheError::Version { found });
    }
    let count = r_u64(r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        out.push(match r_u8(r)? {
            TAG_CELL => Record::Cell(read_cell_record(r)?),
            TAG_DOMAIN => Record::Domain(read_domain_record(r)?),
            t => return Err(CacheError::Corrupt(format!("unknown record tag {t}"))),
        });
    }
    Ok(out)
}

pub fn load_records(path: &Path) -> Result<Vec<Record>, CacheError> {
    let file = File::open(path)?;
    file.lock_shared()?;
    let out = read_records(&mut BufReader::new(&file));
    file.unlock()?;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::solve_cell;
    use crate::solver::SolverConfig;

    #[test]
    fn round_trip_is_bit_exact() {
        let law = FluxLaw::new(2.0, 3.0, 1.0, 2.0).unwrap();
        let micro = Microstructure::dispersed(&[0.5, 0.5], 0.25).unwrap();
        let grid = Grid::unit_cell(8).unwrap();
        let cfg = SolverConfig::default();
        let sol = solve_cell(&law, &micro, &[0.3, -1.1], &grid, &cfg).unwrap();

        let cache = CellCache::new();
        let key = cache.key(&law, &micro, &grid, cfg.tol, &sol.xi);
        cache.insert(key.clone(), Arc::new(sol.clone()));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cells.bin");
        cache.save(&path).unwrap();
        let loaded = CellCache::load(&path).unwrap();
        assert_eq!(loaded.stats().loaded, 1);
        let back = loaded.get(&key).unwrap();
        assert_eq!(*back, sol);
        for (a, b) in back.corrector.values().iter().zip(sol.corrector.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_foreign_files() {
        let mut bad: &[u8] = b"NOTACACHEFILE...";
        assert!(matches!(read_records(&mut bad), Err(CacheError::Magic)));
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&99u32.to_le_bytes());
        buf.extend_from_slice(&0u64.to_le_bytes());
        assert!(matches!(
            read_records(&mut buf.as_slice()),
            Err(CacheError::Version { found: 99 })
        ));
    }

    #[test]
    fn domain_records_round_trip() {
        let grid = Grid::dirichlet_square(4, 1.0).unwrap();
        let field = ScalarField::from_fn(grid, |x| x[0] * (1.0 - x[0]) * x[1]);
        let rec = DomainRecord {
            eps: Some(0.25),
            field,
            residual_norm: 1e-11,
        };
        let hom = DomainRecord {
            eps: None,
            ..rec.clone()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("domain.bin");
        save_domain_records(&path, &[rec.clone(), hom.clone()]).unwrap();
        let back = load_records(&path).unwrap();
        assert_eq!(back, vec![Record::Domain(rec), Record::Domain(hom)]);
    }

    #[test]
    fn missing_file_gives_empty_cache() {
        let dir = tempfile::tempdir().unwrap();
        let c = CellCache::load(&dir.path().join("absent.bin")).unwrap();
        assert!(c.is_empty());
    }
}
