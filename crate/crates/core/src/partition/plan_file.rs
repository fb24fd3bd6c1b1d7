//! Partition plans as `key = value` files, with explicit memberships so a
//! plan can be replayed exactly.

use std::path::Path;

use super::PartitionPlan;
use crate::kv::{join_list, KvFile};
use crate::{Error, Result};

pub fn plan_to_kv(plan: &PartitionPlan) -> KvFile {
    let mut kv = KvFile::new();
    kv.set("J", plan.n_blocks());
    kv.set("K", plan.n_groups());
    kv.set("seed", plan.seed);
    kv.set("strategy", plan.strategy.as_str());
    for (j, b) in plan.block_members.iter().enumerate() {
        kv.set(&format!("block.{}", j + 1), join_list(b));
    }
    for (k, g) in plan.group_members.iter().enumerate() {
        kv.set(&format!("group.{}", k + 1), join_list(g));
    }
    kv
}

pub fn plan_from_kv(kv: &KvFile) -> Result<PartitionPlan> {
    let need = |key: &str| -> Result<usize> {
        kv.get_parsed(key)?
            .ok_or_else(|| Error::InvalidPlan(format!("plan file lacks `{key}`")))
    };
    let j = need("J")?;
    let k = need("K")?;
    let seed = kv.get_parsed("seed")?.unwrap_or(0);
    let strategy = kv
        .get("strategy")
        .map(str::parse)
        .transpose()?
        .unwrap_or_default();
    let list = |key: String| -> Result<Vec<usize>> {
        kv.get_list(&key)?
            .ok_or_else(|| Error::InvalidPlan(format!("plan file lacks `{key}`")))
    };
    let block_members = (1..=j)
        .map(|b| list(format!("block.{b}")))
        .collect::<Result<_>>()?;
    let group_members = (1..=k)
        .map(|g| list(format!("group.{g}")))
        .collect::<Result<_>>()?;
    let plan = PartitionPlan {
        block_members,
        group_members,
        strategy,
        seed,
    };
    plan.validate()?;
    Ok(plan)
}

pub fn write_plan(plan: &PartitionPlan, path: &Path) -> Result<()> {
    plan_to_kv(plan).write(path)
}

pub fn read_plan(path: &Path) -> Result<PartitionPlan> {
    plan_from_kv(&KvFile::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::GroupStrategy;
    use crate::partition::make_plan;

    #[test]
    fn plan_file_round_trip() {
        let plan = make_plan(9, 11, 3, 2, GroupStrategy::SeededRandom, 42).unwrap();
        let kv = KvFile::parse(&plan_to_kv(&plan).render()).unwrap();
        assert_eq!(plan_from_kv(&kv).unwrap(), plan);
    }

    #[test]
    fn strategy_is_recorded() {
        let plan = make_plan(4, 4, 2, 2, GroupStrategy::Contiguous, 7).unwrap();
        let kv = plan_to_kv(&plan);
        assert_eq!(kv.get("strategy"), Some("contiguous"));
        assert_eq!(kv.get("seed"), Some("7"));
    }
}
