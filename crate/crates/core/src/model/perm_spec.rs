use serde::{Deserialize, Serialize};

use super::{
    bias_name, head_weight_name, scale_name, shift_name, weight_name, ModelSpec,
};

/// One tensor axis reordered by a permutation group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermSite {
    pub param: String,
    pub axis: usize,
}

impl PermSite {
    fn new(param: String, axis: usize) -> Self {
        PermSite { param, axis }
    }
}

/// `groups` blocks of `size` units each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupBlock {
    pub groups: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermGroup {
    /// Hidden-layer index the group belongs to.
    pub layer: usize,
    /// Number of units permuted.
    pub size: usize,
    /// Unit-indexed sites.
    pub sites: Vec<PermSite>,
    pub block: Option<GroupBlock>,
    /// Group-indexed sites, reordered by the induced group permutation.
    pub group_sites: Vec<PermSite>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationSpec {
    pub groups: Vec<PermGroup>,
}

impl PermutationSpec {
    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.size).collect()
    }
}

/// One permutation group per hidden layer. The output rows are never
/// permuted; every head's input axis follows the last hidden layer.
pub fn permutation_spec(spec: &ModelSpec) -> PermutationSpec {
    let hidden = spec.hidden_layers();
    let mut groups = Vec::with_capacity(hidden.len());
    for (i, l) in hidden.iter().enumerate() {
        let mut sites = vec![
            PermSite::new(weight_name(i), 0),
            PermSite::new(bias_name(i), 0),
        ];
        if i + 1 < hidden.len() {
            sites.push(PermSite::new(weight_name(i + 1), 1));
        } else {
            sites.extend((0..spec.heads).map(|h| PermSite::new(head_weight_name(h), 1)));
        }
        let (block, group_sites) = if l.is_grouped() {
            (
                Some(GroupBlock {
                    groups: l.groups,
                    size: l.group_size(),
                }),
                vec![PermSite::new(scale_name(i), 0), PermSite::new(shift_name(i), 0)],
            )
        } else {
            (None, Vec::new())
        };
        groups.push(PermGroup {
            layer: i,
            size: l.out_dim,
            sites,
            block,
            group_sites,
        });
    }
    PermutationSpec { groups }
}
