//! Structural example retrieval for event causality identification.
//!
//! Candidate demonstrations are ranked by how closely their knowledge-graph
//! path between the two events and their dependency-tree shape match the
//! query, filtered by an LLM-extracted causal pattern, and handed to a final
//! few-shot Yes/No reasoning call.

pub mod cli;
pub mod concept_graph;
pub mod corpus;
pub mod json_extract;
pub mod llm_gateway;
pub mod evaluation;
pub mod path_metric;
pub mod pattern;
pub mod reasoner;
pub mod retrieval;
pub mod syntax_metric;

use std::fs;
use std::io::{self, Write};
use std::path::Path;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    {
        let mut file = fs::File::create(tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(tmp, path)
}
