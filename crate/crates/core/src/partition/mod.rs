//! Double split of the data: responses into `J` blocks, subjects into `K`
//! groups.

mod ingest;
mod plan_file;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub use ingest::{load_long_csv, render_long_csv, write_long_csv, CsvSchema};
pub use plan_file::{plan_from_kv, plan_to_kv, read_plan, write_plan};

/// Complete-case panel: `N` subjects, each with an `M`-vector response and an
/// `M x q` covariate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub subject_ids: Vec<String>,
    /// `N x M`, row `i` is subject `i`'s response vector.
    pub responses: DMatrix<f64>,
    /// One `M x q` matrix per subject.
    pub covariates: Vec<DMatrix<f64>>,
    pub covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        subject_ids: Vec<String>,
        responses: DMatrix<f64>,
        covariates: Vec<DMatrix<f64>>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = responses.nrows();
        let m = responses.ncols();
        if n == 0 || m == 0 {
            return Err(Error::InvalidDataset("need N >= 1 and M >= 1".into()));
        }
        if subject_ids.len() != n || covariates.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{n} response rows but {} ids and {} covariate matrices",
                subject_ids.len(),
                covariates.len()
            )));
        }
        let q = covariate_names.len();
        if q == 0 {
            return Err(Error::InvalidDataset("need q >= 1 covariates".into()));
        }
        for (i, x) in covariates.iter().enumerate() {
            if x.nrows() != m || x.ncols() != q {
                return Err(Error::InvalidDataset(format!(
                    "subject {} has a {}x{} covariate matrix, expected {m}x{q}",
                    subject_ids[i],
                    x.nrows(),
                    x.ncols()
                )));
            }
        }
        if responses.iter().any(|v| !v.is_finite())
            || covariates.iter().any(|x| x.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidDataset("non-finite values".into()));
        }
        Ok(Self {
            subject_ids,
            responses,
            covariates,
            covariate_names,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.responses.nrows()
    }

    pub fn n_responses(&self) -> usize {
        self.responses.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupStrategy {
    Contiguous,
    #[default]
    SeededRandom,
}

impl GroupStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupStrategy::Contiguous => "contiguous",
            GroupStrategy::SeededRandom => "seeded-random",
        }
    }
}

impl std::str::FromStr for GroupStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contiguous" => Ok(GroupStrategy::Contiguous),
            "seeded-random" | "random" => Ok(GroupStrategy::SeededRandom),
            other => Err(Error::Config(format!("unknown group strategy `{other}`"))),
        }
    }
}

/// Bookkeeping for the double split.
///
/// `block_members[j]` lists the response indices of block `j` in order and
/// `group_members[k]` the subject indices of group `k` in order; the order of
/// `group_members[k]` is the row order of every block `(j, k)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    pub block_members: Vec<Vec<usize>>,
    pub group_members: Vec<Vec<usize>>,
    pub strategy: GroupStrategy,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn n_blocks(&self) -> usize {
        self.block_members.len()
    }

    pub fn n_groups(&self) -> usize {
        self.group_members.len()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.block_members.iter().map(Vec::len).collect()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.group_members.iter().map(Vec::len).collect()
    }

    pub fn n_responses(&self) -> usize {
        self.block_members.iter().map(Vec::len).sum()
    }

    pub fn n_subjects(&self) -> usize {
        self.group_members.iter().map(Vec::len).sum()
    }

    pub fn block_of_response(&self) -> Vec<usize> {
        invert_membership(&self.block_members, self.n_responses())
    }

    pub fn group_of_subject(&self) -> Vec<usize> {
        invert_membership(&self.group_members, self.n_subjects())
    }

    /// Replaces the contiguous response blocks with an explicit map
    /// `response index -> block`. Block order within a block follows response
    /// order.
    pub fn with_block_map(mut self, block_of_response: &[usize]) -> Result<Self> {
        let m = self.n_responses();
        if block_of_response.len() != m {
            return Err(Error::InvalidPlan(format!(
                "block map has {} entries, expected M = {m}",
                block_of_response.len()
            )));
        }
        let j = block_of_response.iter().copied().max().unwrap_or(0) + 1;
        let mut members = vec![Vec::new(); j];
        for (t, &b) in block_of_response.iter().enumerate() {
            members[b].push(t);
        }
        self.block_members = members;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_members.is_empty() || self.group_members.is_empty() {
            return Err(Error::InvalidPlan("need J >= 1 and K >= 1".into()));
        }
        for (j, b) in self.block_members.iter().enumerate() {
            if b.len() < 2 {
                return Err(Error::InvalidPlan(format!(
                    "block {} has {} responses; every block needs at least 2",
                    j + 1,
                    b.len()
                )));
            }
        }
        for (k, g) in self.group_members.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::InvalidPlan(format!("group {} is empty", k + 1)));
            }
        }
        check_partition(&self.block_members, self.n_responses(), "responses")?;
        check_partition(&self.group_members, self.n_subjects(), "subjects")?;
        Ok(())
    }
}

fn invert_membership(members: &[Vec<usize>], total: usize) -> Vec<usize> {
    let mut out = vec![usize::MAX; total];
    for (b, list) in members.iter().enumerate() {
        for &i in list {
            if i < total {
                out[i] = b;
            }
        }
    }
    out
}

fn check_partition(members: &[Vec<usize>], total: usize, what: &str) -> Result<()> {
    let mut seen = vec![false; total];
    for list in members {
        for &i in list {
            if i >= total || seen[i] {
                return Err(Error::InvalidPlan(format!(
                    "{what} memberships do not partition 0..{total}"
                )));
            }
            seen[i] = true;
        }
    }
    Ok(())
}

/// Near-equal split of `total` into `parts`: the first `total % parts` parts
/// get one extra element.
pub fn balanced_sizes(total: usize, parts: usize) -> Vec<usize> {
    let base = total / parts;
    let extra = total % parts;
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}

fn contiguous_members(order: &[usize], sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&s| {
            let chunk = order[start..start + s].to_vec();
            start += s;
            chunk
        })
        .collect()
}

pub fn make_plan(
    m: usize,
    n: usize,
    j: usize,
    k: usize,
    strategy: GroupStrategy,
    seed: u64,
) -> Result<PartitionPlan> {
    if j == 0 || k == 0 {
        return Err(Error::InvalidPlan("need J >= 1 and K >= 1".into()));
    }
    if k > n {
        return Err(Error::InvalidPlan(format!("K = {k} exceeds N = {n}")));
    }
    if 2 * j > m {
        return Err(Error::InvalidPlan(format!(
            "J = {j} blocks of M = {m} responses leaves a block with fewer than 2 responses"
        )));
    }
    let responses: Vec<usize> = (0..m).collect();
    let block_members = contiguous_members(&responses, &balanced_sizes(m, j));

    let mut subjects: Vec<usize> = (0..n).collect();
    if strategy == GroupStrategy::SeededRandom {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        subjects.shuffle(&mut rng);
    }
    let group_members = contiguous_members(&subjects, &balanced_sizes(n, k));

    let plan = PartitionPlan {
        block_members,
        group_members,
        strategy,
        seed,
    };
    plan.validate()?;
    Ok(plan)
}

/// One block `(j, k)`: responses of block `j` for the subjects of group `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockData {
    pub j: usize,
    pub k: usize,
    /// `n_k x m_j`.
    pub y: DMatrix<f64>,
    /// Per subject `m_j x q`.
    pub x: Vec<DMatrix<f64>>,
    /// Columns of `x` carrying the shared parameter.
    pub theta_cols: Vec<usize>,
    /// Dataset row of every block row.
    pub subjects: Vec<usize>,
}

impl BlockData {
    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn m(&self) -> usize {
        self.y.ncols()
    }

    pub fn p(&self) -> usize {
        self.theta_cols.len()
    }

    /// The `m_j x p` design of block row `i`.
    pub fn design(&self, i: usize) -> DMatrix<f64> {
        self.x[i].select_columns(self.theta_cols.iter())
    }
}

/// Cuts `data` into the `J x K` blocks of `plan`, ordered `k`-major,
/// `j`-minor (index `k * J + j`).
pub fn split(data: &Dataset, plan: &PartitionPlan) -> Result<Vec<BlockData>> {
    let theta_cols: Vec<usize> = (0..data.n_covariates()).collect();
    split_with_columns(data, plan, &theta_cols)
}

pub fn split_with_columns(
    data: &Dataset,
    plan: &PartitionPlan,
    theta_cols: &[usize],
) -> Result<Vec<BlockData>> {
    plan.validate()?;
    if plan.n_responses() != data.n_responses() || plan.n_subjects() != data.n_subjects() {
        return Err(Error::InvalidPlan(format!(
            "plan is for M = {}, N = {} but data has M = {}, N = {}",
            plan.n_responses(),
            plan.n_subjects(),
            data.n_responses(),
            data.n_subjects()
        )));
    }
    if theta_cols.is_empty() || theta_cols.iter().any(|&c| c >= data.n_covariates()) {
        return Err(Error::InvalidPlan("theta columns out of range".into()));
    }
    let mut blocks = Vec::with_capacity(plan.n_blocks() * plan.n_groups());
    for (k, group) in plan.group_members.iter().enumerate() {
        for (j, block) in plan.block_members.iter().enumerate() {
            let y = DMatrix::from_fn(group.len(), block.len(), |r, c| {
                data.responses[(group[r], block[c])]
            });
            let x = group
                .iter()
                .map(|&i| data.covariates[i].select_rows(block.iter()))
                .collect();
            blocks.push(BlockData {
                j,
                k,
                y,
                x,
                theta_cols: theta_cols.to_vec(),
                subjects: group.clone(),
            });
        }
    }
    Ok(blocks)
}

/// Inverse of [`split`] on the responses and covariates.
pub fn reassemble(
    blocks: &[BlockData],
    plan: &PartitionPlan,
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let n = plan.n_subjects();
    let m = plan.n_responses();
    let q = blocks
        .first()
        .map(|b| b.x.first().map_or(0, |x| x.ncols()))
        .unwrap_or(0);
    let mut y = DMatrix::zeros(n, m);
    let mut x = vec![DMatrix::zeros(m, q); n];
    for b in blocks {
        let cols = &plan.block_members[b.j];
        for (r, &i) in b.subjects.iter().enumerate() {
            for (c, &t) in cols.iter().enumerate() {
                y[(i, t)] = b.y[(r, c)];
                x[i].set_row(t, &b.x[r].row(c));
            }
        }
    }
    Ok((y, x))
}
