//! Storage cost of iFCTN and of the FCTN, Tucker and TT formats.

use std::fmt;

use crate::cherry::RankMatrix;
use crate::error::{Error, Result};

/// A decomposition format together with its rank parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelRanks {
    /// `sum_k sum_{i != k} R[k,i] * I_k`.
    IFctn(RankMatrix),
    /// `sum_k I_k * prod_{i != k} R[k,i]`; the same symmetric matrix layout.
    Fctn(RankMatrix),
    /// Core `r_1 x ... x r_N` plus `N` factor matrices.
    Tucker(Vec<usize>),
    /// `N - 1` interior bond dimensions; the boundary ranks are 1.
    Tt(Vec<usize>),
}

impl ModelRanks {
    pub fn name(&self) -> &'static str {
        match self {
            ModelRanks::IFctn(_) => "iFCTN",
            ModelRanks::Fctn(_) => "FCTN",
            ModelRanks::Tucker(_) => "Tucker",
            ModelRanks::Tt(_) => "TT",
        }
    }
}

impl fmt::Display for ModelRanks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn check_order(model: &str, shape: &[usize], got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::InvalidArgument(format!(
            "{model} ranks for an order-{} tensor need {expected} entries, got {got}",
            shape.len()
        )));
    }
    Ok(())
}

/// Number of stored parameters of `model` for a tensor of `shape`.
pub fn param_count(shape: &[usize], model: &ModelRanks) -> Result<u64> {
    let n = shape.len();
    if n < 2 || shape.contains(&0) {
        return Err(Error::InvalidShape(format!("invalid shape {shape:?}")));
    }
    let dims: Vec<u64> = shape.iter().map(|&d| d as u64).collect();
    let count = match model {
        ModelRanks::IFctn(r) => {
            check_order("iFCTN", shape, r.order(), n)?;
            (0..n)
                .map(|k| {
                    (0..n)
                        .filter(|&i| i != k)
                        .map(|i| r.get(k, i) as u64 * dims[k])
                        .sum::<u64>()
                })
                .sum()
        }
        ModelRanks::Fctn(r) => {
            check_order("FCTN", shape, r.order(), n)?;
            (0..n)
                .map(|k| {
                    dims[k]
                        * (0..n)
                            .filter(|&i| i != k)
                            .map(|i| r.get(k, i) as u64)
                            .product::<u64>()
                })
                .sum()
        }
        ModelRanks::Tucker(r) => {
            check_order("Tucker", shape, r.len(), n)?;
            if r.contains(&0) {
                return Err(Error::InvalidArgument("Tucker ranks must be positive".into()));
            }
            let core: u64 = r.iter().map(|&x| x as u64).product();
            core + dims.iter().zip(r).map(|(i, &x)| i * x as u64).sum::<u64>()
        }
        ModelRanks::Tt(r) => {
            check_order("TT", shape, r.len(), n - 1)?;
            if r.contains(&0) {
                return Err(Error::InvalidArgument("TT ranks must be positive".into()));
            }
            let mut bonds = vec![1u64];
            bonds.extend(r.iter().map(|&x| x as u64));
            bonds.push(1);
            (0..n).map(|k| bonds[k] * dims[k] * bonds[k + 1]).sum()
        }
    };
    Ok(count)
}
