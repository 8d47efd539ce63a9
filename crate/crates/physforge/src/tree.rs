//! Corpus extraction over a directory of `.lean` files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use log::warn;
use rayon::prelude::*;
use walkdir::WalkDir;

use physforge_core::corpus::{extract_source, Extraction};
use physforge_core::tokens::TokenEstimator;

/// `.lean` files under `root` as (absolute, `/`-separated relative) paths in
/// sorted relative-path order.
pub fn lean_files(root: &Path) -> Result<Vec<(PathBuf, String)>> {
    if !root.is_dir() {
        bail!("corpus root {} is not a directory", root.display());
    }
    let mut files: Vec<(PathBuf, String)> = WalkDir::new(root)
        .follow_links(true)
        .into_iter()
        .filter_map(|entry| match entry {
            Ok(e) => Some(e),
            Err(err) => {
                warn!("skipping unreadable entry: {err}");
                None
            }
        })
        .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "lean"))
        .filter_map(|e| {
            let rel = e.path().strip_prefix(root).ok()?;
            let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            Some((e.path().to_path_buf(), rel))
        })
        .collect();
    files.sort_by(|a, b| a.1.cmp(&b.1));
    Ok(files)
}

/// Extracts every file in parallel and merges in path order, so the result
/// depends only on the tree's bytes. Unreadable files are logged and skipped.
pub fn extract_corpus<E: TokenEstimator + Sync>(root: &Path, max_tokens: usize, estimator: &E) -> Result<Extraction> {
    let files = lean_files(root)?;
    let parts: Vec<Extraction> = files
        .par_iter()
        .map(|(abs, rel)| match std::fs::read(abs).map(String::from_utf8) {
            Ok(Ok(src)) => extract_source(rel, &src, max_tokens, estimator),
            Ok(Err(_)) => {
                warn!("{rel}: not valid UTF-8, skipped");
                Extraction::default()
            }
            Err(err) => {
                warn!("{rel}: {err}, skipped");
                Extraction::default()
            }
        })
        .collect();
    let mut all = Extraction::default();
    for part in parts {
        all.append(part);
    }
    Ok(all)
}
