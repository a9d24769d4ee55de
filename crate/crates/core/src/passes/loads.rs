use serde::Serialize;

use crate::cfg::{BlockId, Cfg};
use crate::ir::Gpr;

/// A load whose value the dependency passes mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LoadSite {
    pub block: BlockId,
    pub index: usize,
    pub dest: Gpr,
}

/// Every memory-source, register-destination instruction in a block reachable
/// from some conditional branch of the same function. Stores, stack pops and
/// LEA are never selected.
pub fn select_hardened_loads(cfg: &Cfg) -> Vec<LoadSite> {
    let reach = cfg.reachable_from_branches();
    cfg.blocks
        .iter()
        .filter(|b| reach[b.id])
        .flat_map(|b| {
            b.insts.iter().enumerate().filter_map(move |(i, inst)| {
                inst.load_dest().map(|dest| LoadSite {
                    block: b.id,
                    index: i,
                    dest,
                })
            })
        })
        .collect()
}
