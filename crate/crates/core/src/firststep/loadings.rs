//! Measurement-system parameters from covariance ratios and mean differences.

use crate::error::{Error, Result};
use crate::model::Latent;
use crate::simulate::{LatentPanel, MomentTable};
use serde::{Deserialize, Serialize};

/// Where each observable sits in the panel column order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub periods: usize,
    pub skill_measures: usize,
    pub invest_measures: usize,
}

impl Layout {
    pub const LN_Y: usize = 0;
    pub const Q: usize = 1;

    pub fn of_panel(p: &LatentPanel) -> Self {
        Layout {
            periods: p.periods,
            skill_measures: p.skill.first().map_or(0, Vec::len),
            invest_measures: p.invest.first().map_or(0, Vec::len),
        }
    }

    pub fn of_names(names: &[String]) -> Result<Self> {
        let count = |prefix: &str| names.iter().filter(|n| n.starts_with(prefix)).count();
        let ms = count("Z_skill_t0_");
        let mi = count("Z_invest_t0_");
        if ms == 0 {
            return Err(Error::Format("no skill measures in moment table".into()));
        }
        let periods = count("Z_skill_") / ms - 1;
        Ok(Layout {
            periods,
            skill_measures: ms,
            invest_measures: mi,
        })
    }

    pub fn n_obs(&self) -> usize {
        2 + (self.periods + 1) * self.skill_measures + self.periods * self.invest_measures
    }

    pub fn slots(&self, v: Latent) -> usize {
        match v {
            Latent::Skill => self.periods + 1,
            Latent::Invest => self.periods,
        }
    }

    pub fn measures(&self, v: Latent) -> usize {
        match v {
            Latent::Skill => self.skill_measures,
            Latent::Invest => self.invest_measures,
        }
    }

    pub fn col(&self, v: Latent, t: usize, m: usize) -> usize {
        match v {
            Latent::Skill => 2 + t * self.skill_measures + m,
            Latent::Invest => {
                2 + (self.periods + 1) * self.skill_measures + t * self.invest_measures + m
            }
        }
    }

    /// Latent index in the ordering (θ_0..T, I_0..T-1, lnY).
    pub fn latent_index(&self, v: Latent, t: usize) -> usize {
        match v {
            Latent::Skill => t,
            Latent::Invest => self.periods + 1 + t,
        }
    }

    pub fn latent_dim(&self) -> usize {
        2 * self.periods + 2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadingBlock {
    pub mu: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub error_var: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadingEstimates {
    pub skill: LoadingBlock,
    pub invest: LoadingBlock,
    pub rho0: f64,
    pub rho1: f64,
    pub q_error_var: f64,
    /// Variance of each tilde latent, `[skill t..., invest t...]`.
    #[serde(default)]
    pub latent_var: Vec<f64>,
}

impl LoadingEstimates {
    pub fn block(&self, v: Latent) -> &LoadingBlock {
        match v {
            Latent::Skill => &self.skill,
            Latent::Invest => &self.invest,
        }
    }

    pub fn layout(&self) -> Layout {
        Layout {
            periods: self.invest.lambda.len(),
            skill_measures: self.skill.lambda.first().map_or(0, Vec::len),
            invest_measures: self.invest.lambda.first().map_or(0, Vec::len),
        }
    }
}

/// Sample moments plus standard errors of the covariances.
struct Moments {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    cov_se: Vec<Vec<f64>>,
}

impl Moments {
    fn of_panel(p: &LatentPanel) -> Self {
        let cols = p.columns();
        let k = cols.len();
        let n = p.n as f64;
        let mean: Vec<f64> = cols.iter().map(|c| crate::stats::mean(c)).collect();
        let centered: Vec<Vec<f64>> = cols
            .iter()
            .zip(&mean)
            .map(|(c, m)| c.iter().map(|x| x - m).collect())
            .collect();
        let mut cov = vec![vec![0.0; k]; k];
        let mut cov_se = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..=i {
                let (a, b) = (&centered[i], &centered[j]);
                let (mut s, mut s2) = (0.0, 0.0);
                for (x, y) in a.iter().zip(b) {
                    let v = x * y;
                    s += v;
                    s2 += v * v;
                }
                let c = s / n;
                let se = ((s2 / n - c * c).max(0.0) / n).sqrt();
                cov[i][j] = c;
                cov[j][i] = c;
                cov_se[i][j] = se;
                cov_se[j][i] = se;
            }
        }
        Moments { mean, cov, cov_se }
    }

    fn of_table(t: &MomentTable) -> Self {
        let k = t.mean.len();
        Moments {
            mean: t.mean.clone(),
            cov: t.cov.clone(),
            cov_se: t.cov_se.clone().unwrap_or_else(|| vec![vec![0.0; k]; k]),
        }
    }

    fn corr(&self, i: usize, j: usize) -> f64 {
        let d = (self.cov[i][i] * self.cov[j][j]).sqrt();
        if d > 0.0 {
            self.cov[i][j] / d
        } else {
            0.0
        }
    }

    /// Whether the covariance is distinguishable from zero.
    fn usable(&self, i: usize, j: usize) -> bool {
        let c = self.cov[i][j].abs();
        let se = self.cov_se[i][j];
        if se > 0.0 {
            c > 5.0 * se
        } else {
            c > 1e-12 * (self.cov[i][i] * self.cov[j][j]).sqrt()
        }
    }
}

/// Ratio `cov(r, target) / cov(r, base)` averaged over usable references `r`,
/// each weighted by its squared correlation with `base`.
fn ratio(mo: &Moments, refs: &[usize], base: usize, target: usize, what: &str) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for &r in refs {
        if !mo.usable(r, base) {
            continue;
        }
        let w = mo.corr(r, base).powi(2);
        num += w * mo.cov[r][target] / mo.cov[r][base];
        den += w;
    }
    if den > 0.0 {
        Ok(num / den)
    } else {
        Err(Error::DegenerateCovariance(format!(
            "identification assumption 1(e) violated in sample: no reference measure has a significant covariance with {what}"
        )))
    }
}

fn estimate(mo: &Moments, lay: Layout) -> Result<LoadingEstimates> {
    if lay.skill_measures < 2 || (lay.periods > 0 && lay.invest_measures < 2) {
        return Err(Error::invalid(
            "measures",
            "at least two measures per latent are required",
        ));
    }
    let all: Vec<usize> = (0..lay.n_obs()).collect();
    let mut latent_var = Vec::new();
    let mut blocks = Vec::new();
    for v in [Latent::Skill, Latent::Invest] {
        let nm = lay.measures(v);
        let mut b = LoadingBlock {
            mu: vec![vec![0.0; nm]; lay.slots(v)],
            lambda: vec![vec![1.0; nm]; lay.slots(v)],
            error_var: vec![vec![0.0; nm]; lay.slots(v)],
        };
        for t in 0..lay.slots(v) {
            let own: Vec<usize> = (0..nm).map(|m| lay.col(v, t, m)).collect();
            let refs: Vec<usize> = all.iter().copied().filter(|c| !own.contains(c)).collect();
            let base = own[0];
            for m in 1..nm {
                let what = format!("{} measure 0 in period {t}", v.name());
                let l = ratio(mo, &refs, base, own[m], &what)?;
                b.lambda[t][m] = l;
                b.mu[t][m] = mo.mean[own[m]] - l * mo.mean[base];
            }
            // Signal variance from within-period pairs.
            let var_t = (1..nm)
                .map(|m| mo.cov[base][own[m]] / b.lambda[t][m])
                .sum::<f64>()
                / (nm - 1) as f64;
            latent_var.push(var_t);
            for m in 0..nm {
                let l = b.lambda[t][m];
                b.error_var[t][m] = (mo.cov[own[m]][own[m]] - l * l * var_t).max(0.0);
            }
        }
        blocks.push(b);
    }
    let base = lay.col(Latent::Skill, lay.periods, 0);
    let refs: Vec<usize> = all
        .iter()
        .copied()
        .filter(|c| *c != base && *c != Layout::Q)
        .collect();
    let rho1 = ratio(mo, &refs, base, Layout::Q, "the final skill measure")?;
    let rho0 = mo.mean[Layout::Q] - rho1 * mo.mean[base];
    let v_t = latent_var[lay.periods];
    let q_error_var = (mo.cov[Layout::Q][Layout::Q] - rho1 * rho1 * v_t).max(0.0);
    let invest = blocks.pop().expect("two blocks");
    let skill = blocks.pop().expect("two blocks");
    Ok(LoadingEstimates {
        skill,
        invest,
        rho0,
        rho1,
        q_error_var,
        latent_var,
    })
}

pub fn estimate_loadings(panel: &LatentPanel) -> Result<LoadingEstimates> {
    if panel.n < 50 {
        return Err(Error::invalid(
            "n",
            "at least 50 individuals are needed to estimate loadings",
        ));
    }
    estimate(&Moments::of_panel(panel), Layout::of_panel(panel))
}

/// Same estimator applied to a population moment table.
pub fn estimate_loadings_from_moments(table: &MomentTable) -> Result<LoadingEstimates> {
    estimate(&Moments::of_table(table), Layout::of_names(&table.names)?)
}
