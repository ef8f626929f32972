//! Encoder attention of the [PAGE] query rows.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::corpus::write_atomic;
use crate::error::{Error, Result};
use crate::model::{HiVt5Model, PageInput, SeqLayout};
use crate::tensor::no_grad;

/// One layer/head slice: `rows` [PAGE] queries over `cols` keys, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub layer: usize,
    pub head: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl AttentionMap {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn file_name(&self) -> String {
        format!("attn_L{}_H{}.csv", self.layer, self.head)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for r in 0..self.rows {
            let cells: Vec<String> = self.row(r).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }
}

/// Attention maps for every encoder layer and head of one page, plus the
/// page's sequence layout (to locate OCR keys).
pub fn page_attention(model: &HiVt5Model, page: &PageInput) -> Result<(Vec<AttentionMap>, SeqLayout)> {
    let enc = no_grad(|| model.encode_page(page))?;
    let m = model.config.page_tokens;
    let mut maps = Vec::new();
    for (layer, a) in enc.attentions.iter().enumerate() {
        let &[heads, n, n2] = a.shape() else {
            return Err(Error::Shape(format!("attention of shape {:?}", a.shape())));
        };
        debug_assert_eq!(n, n2);
        let data = a.data();
        for head in 0..heads {
            let base = head * n * n;
            maps.push(AttentionMap {
                layer,
                head,
                rows: m,
                cols: n,
                data: data[base..base + m * n].to_vec(),
            });
        }
    }
    Ok((maps, enc.layout))
}

/// Writes `attn_L{layer}_H{head}.csv` files for one page into `dir`.
pub fn dump_attention(model: &HiVt5Model, page: &PageInput, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (maps, _) = page_attention(model, page)?;
    maps.iter()
        .map(|m| {
            let path = dir.join(m.file_name());
            write_atomic(&path, m.to_csv().as_bytes())?;
            Ok(path)
        })
        .collect()
}
