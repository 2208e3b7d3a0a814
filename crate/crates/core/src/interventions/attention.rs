use serde::{Deserialize, Serialize};

use crate::datasets::{check_same_layout, Role, RolePositions, SyllogismInstance};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::metrics::batch_stats;
use crate::model::{forward_hooked, HeadId, ModelBundle};

/// Filler label for pooled non-term positions.
pub const POOLED_LABEL: &str = "–";

/// Key positions summarised by one profile column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileColumn {
    pub label: String,
    pub positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadAttention {
    pub head: HeadId,
    /// Batch mean of the weight on each column.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Batch-averaged attention from one query position to every earlier
/// position, grouped into term slots and pooled filler runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionProfile {
    pub query_role: Role,
    pub query_position: usize,
    pub columns: Vec<ProfileColumn>,
    pub heads: Vec<HeadAttention>,
    pub n_samples: usize,
}

impl AttentionProfile {
    pub fn head(&self, head: HeadId) -> Option<&HeadAttention> {
        self.heads.iter().find(|h| h.head == head)
    }

    /// `(mean, std)` of the weight on the first column of `role`.
    pub fn weight_to(&self, head: HeadId, role: Role) -> Option<(f64, f64)> {
        let label = format!("[{}]", role.label());
        let col = self.columns.iter().position(|c| c.label == label)?;
        let h = self.head(head)?;
        Some((h.mean[col], h.std[col]))
    }
}

pub(crate) fn profile_columns(roles: &RolePositions, query: usize) -> Vec<ProfileColumn> {
    let mut cols: Vec<ProfileColumn> = Vec::new();
    for pos in 0..=query {
        match roles.role_at(pos) {
            Some(r) => cols.push(ProfileColumn { label: format!("[{}]", r.label()), positions: vec![pos] }),
            None => match cols.last_mut() {
                Some(c) if c.label == POOLED_LABEL => c.positions.push(pos),
                _ => cols.push(ProfileColumn { label: POOLED_LABEL.into(), positions: vec![pos] }),
            },
        }
    }
    cols
}

/// Mean post-softmax weight from the `query_role` position. `heads = None`
/// profiles every head. Instances must share one layout.
pub fn attention_profile(
    bundle: &ModelBundle,
    instances: &[SyllogismInstance],
    query_role: Role,
    heads: Option<&[HeadId]>,
    exec: &Exec,
) -> Result<AttentionProfile> {
    check_same_layout(instances)?;
    let roles = &instances[0].role_positions;
    let query = roles.first(query_role);
    let columns = profile_columns(roles, query);
    let heads: Vec<HeadId> = match heads {
        Some(h) => h.to_vec(),
        None => (0..bundle.config.n_layers)
            .flat_map(|l| (0..bundle.config.n_heads).map(move |h| HeadId::new(l, h)))
            .collect(),
    };
    for h in &heads {
        bundle.check_head(h.layer, h.head)?;
    }
    // [sample][head][column]
    let per_sample = exec.try_map(instances, |inst| -> Result<Vec<Vec<f64>>> {
        let cache = forward_hooked(bundle, &inst.tokens, &[])?;
        Ok(heads
            .iter()
            .map(|h| {
                let row = cache.pattern(h.layer, h.head);
                let row = row.row(query);
                columns
                    .iter()
                    .map(|c| c.positions.iter().map(|&p| row[p] as f64).sum::<f64>() / c.positions.len() as f64)
                    .collect()
            })
            .collect())
    })?;
    let mut out = Vec::with_capacity(heads.len());
    for (hi, &head) in heads.iter().enumerate() {
        let (mut mean, mut std) = (Vec::new(), Vec::new());
        for ci in 0..columns.len() {
            let xs: Vec<f64> = per_sample.iter().map(|s| s[hi][ci]).collect();
            let stats = batch_stats(&xs).map_err(|_| Error::Empty("instances"))?;
            mean.push(stats.mean);
            std.push(stats.std);
        }
        out.push(HeadAttention { head, mean, std });
    }
    Ok(AttentionProfile {
        query_role,
        query_position: query,
        columns,
        heads: out,
        n_samples: instances.len(),
    })
}
