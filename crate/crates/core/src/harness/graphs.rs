//! Topology generators and edge-list input.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::model::Unit;

/// Restarts allowed before the regular generator gives up.
pub const REGULAR_MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("no {degree}-regular graph on {n} vertices (need degree < n and n*degree even)")]
    Impossible { n: usize, degree: usize },
    #[error("no simple {degree}-regular graph on {n} vertices after {attempts} attempts")]
    Exhausted { n: usize, degree: usize, attempts: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected two unit indices, got {text:?}")]
    Parse { path: String, line: usize, text: String },
}

/// Undirected simple `degree`-regular graph from the configuration model.
///
/// Stubs are paired uniformly at random; a pairing that would create a loop
/// or a repeated edge is redrawn, and the whole pairing restarts when the
/// remaining stubs admit no valid pair.
pub fn random_regular<R: Rng + ?Sized>(n: usize, degree: usize, rng: &mut R) -> Result<Vec<(Unit, Unit)>, GraphError> {
    if degree >= n.max(1) && degree > 0 || (n * degree) % 2 == 1 {
        return Err(GraphError::Impossible { n, degree });
    }
    for _ in 0..REGULAR_MAX_ATTEMPTS {
        if let Some(edges) = try_pairing(n, degree, rng) {
            return Ok(edges);
        }
    }
    Err(GraphError::Exhausted {
        n,
        degree,
        attempts: REGULAR_MAX_ATTEMPTS,
    })
}

fn try_pairing<R: Rng + ?Sized>(n: usize, degree: usize, rng: &mut R) -> Option<Vec<(Unit, Unit)>> {
    let mut stubs: Vec<Unit> = (0..n).flat_map(|v| std::iter::repeat(v).take(degree)).collect();
    stubs.shuffle(rng);
    let mut seen: HashSet<(Unit, Unit)> = HashSet::with_capacity(n * degree / 2);
    let mut edges = Vec::with_capacity(n * degree / 2);
    while !stubs.is_empty() {
        let tries = 10 * stubs.len() * stubs.len();
        let mut paired = false;
        for _ in 0..tries {
            let i = rng.gen_range(0..stubs.len());
            let j = rng.gen_range(0..stubs.len());
            let (u, v) = (stubs[i], stubs[j]);
            let key = (u.min(v), u.max(v));
            if u == v || seen.contains(&key) {
                continue;
            }
            seen.insert(key);
            edges.push(key);
            let (hi, lo) = (i.max(j), i.min(j));
            stubs.swap_remove(hi);
            stubs.swap_remove(lo);
            paired = true;
            break;
        }
        if !paired {
            return None;
        }
    }
    edges.sort_unstable();
    Some(edges)
}

/// Whitespace-separated pairs, one per line; `#` starts a comment.
pub fn read_edge_list(path: &Path) -> Result<Vec<(Unit, Unit)>, GraphError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: shown.clone(),
        source,
    })?;
    parse_edge_list(&text).map_err(|(line, text)| GraphError::Parse { path: shown, line, text })
}

pub fn parse_edge_list(text: &str) -> Result<Vec<(Unit, Unit)>, (usize, String)> {
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let parts: Vec<&str> = body.split_whitespace().collect();
        match parts.as_slice() {
            [a, b] => match (a.parse(), b.parse()) {
                (Ok(x), Ok(y)) => edges.push((x, y)),
                _ => return Err((i + 1, raw.to_string())),
            },
            _ => return Err((i + 1, raw.to_string())),
        }
    }
    Ok(edges)
}
