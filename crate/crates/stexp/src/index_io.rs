//! Retrieval index persistence: `embeddings.f32`, `expressions.f32` and
//! `provenance.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stexp_core::inference::{Provenance, RetrievalIndex};
use stexp_core::Tensor;

use crate::format::{read_f32, read_json, write_f32, write_json};
use crate::{Error, Result};

pub const EMBEDDINGS: &str = "embeddings.f32";
pub const EXPRESSIONS: &str = "expressions.f32";
pub const PROVENANCE: &str = "provenance.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvenanceFile {
    pub rows: usize,
    pub d_embed: usize,
    pub gene_num: usize,
    pub gene_names: Vec<String>,
    /// `(slide_id, spot index)` per row.
    pub spots: Vec<(String, usize)>,
}

pub fn save_index(dir: &Path, index: &RetrievalIndex, gene_names: &[String]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_f32(&dir.join(EMBEDDINGS), index.embeddings().data())?;
    write_f32(&dir.join(EXPRESSIONS), index.expressions().data())?;
    let prov = ProvenanceFile {
        rows: index.len(),
        d_embed: index.d_embed(),
        gene_num: index.gene_num(),
        gene_names: gene_names.to_vec(),
        spots: index
            .provenance()
            .iter()
            .map(|p| (p.slide_id.clone(), p.spot))
            .collect(),
    };
    write_json(&dir.join(PROVENANCE), &prov)
}

/// Loads an index and the gene names of its expression columns.
pub fn load_index(dir: &Path) -> Result<(RetrievalIndex, Vec<String>)> {
    let ppath = dir.join(PROVENANCE);
    let p: ProvenanceFile = read_json(&ppath)?;
    if p.spots.len() != p.rows || p.gene_names.len() != p.gene_num {
        return Err(Error::format(
            &ppath,
            "spots",
            "row or gene counts disagree",
        ));
    }
    let emb = read_f32(&dir.join(EMBEDDINGS), "embeddings", p.rows * p.d_embed)?;
    let expr = read_f32(&dir.join(EXPRESSIONS), "expressions", p.rows * p.gene_num)?;
    let provenance = p
        .spots
        .into_iter()
        .map(|(slide_id, spot)| Provenance { slide_id, spot })
        .collect();
    let index = RetrievalIndex::new(
        Tensor::new(&[p.rows, p.d_embed], emb)?,
        Tensor::new(&[p.rows, p.gene_num], expr)?,
        provenance,
    )?;
    Ok((index, p.gene_names))
}
