//! On-disk shrinkage tables keyed by a content hash of what produced them.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bnnrisk::mixing::{build_mixing_sample, MixingSpec};
use bnnrisk::shrinkage::{build_table, ShrinkageSource, ShrinkageTable, TableSource};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// What a table is built from.
#[derive(Debug, Clone, PartialEq)]
pub enum TableRecipe {
    Sample {
        spec: MixingSpec,
        seed: u64,
        m: usize,
    },
    BetaPrimeClosed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableKey {
    pub recipe: TableRecipe,
    pub p: usize,
    pub n_grid: usize,
    pub s_max: f64,
}

impl TableKey {
    fn canonical(&self) -> String {
        let src = match &self.recipe {
            TableRecipe::Sample { spec, seed, m } => format!("mc|{spec}|{seed}|{m}"),
            TableRecipe::BetaPrimeClosed => "closed-form-betaprime".into(),
        };
        // s_max in hex bits so the key is exact
        format!(
            "{src}|p={}|n={}|smax={:016x}",
            self.p,
            self.n_grid,
            self.s_max.to_bits()
        )
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }

    fn matches(&self, table: &ShrinkageTable) -> bool {
        let source_ok = match (&self.recipe, table.source()) {
            (
                TableRecipe::Sample { spec, seed, m },
                TableSource::Sample {
                    spec: s2,
                    seed: e2,
                    m: m2,
                },
            ) => spec == s2 && seed == e2 && m == m2,
            (TableRecipe::BetaPrimeClosed, TableSource::BetaPrimeClosed) => true,
            _ => false,
        };
        source_ok
            && table.dimension() == self.p
            && table.grid().len() == self.n_grid
            && table.s_max().to_bits() == self.s_max.to_bits()
    }
}

pub struct TableCache {
    dir: PathBuf,
}

impl TableCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, key: &TableKey) -> PathBuf {
        self.dir.join(format!("table-{}.csv", &key.hash()[..16]))
    }

    /// Returns the table and whether it came from disk.
    pub fn get_or_build(&self, key: &TableKey) -> Result<(ShrinkageTable, bool)> {
        let path = self.path_for(key);
        if path.exists() {
            if let Ok(t) = ShrinkageTable::load(&path) {
                if key.matches(&t) {
                    return Ok((t, true));
                }
            }
        }
        let table = match &key.recipe {
            TableRecipe::Sample { spec, seed, m } => {
                let sample = build_mixing_sample(spec, *m, *seed)?;
                build_table(
                    ShrinkageSource::Sample(&sample),
                    key.p,
                    key.n_grid,
                    key.s_max,
                )?
            }
            TableRecipe::BetaPrimeClosed => build_table(
                ShrinkageSource::BetaPrimeClosed,
                key.p,
                key.n_grid,
                key.s_max,
            )?,
        };
        std::fs::create_dir_all(&self.dir)
            .with_context(|| format!("creating {}", self.dir.display()))?;
        save_atomic(&table, &path)?;
        Ok((table, false))
    }
}

fn save_atomic(table: &ShrinkageTable, path: &Path) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    table.save(&tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
