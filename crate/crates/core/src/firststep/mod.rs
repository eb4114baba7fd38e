//! First step: measurement parameters, the latent mixture, and draws from it.

pub mod em;
pub mod loadings;

pub use em::{fit_latent_mixture, EmConfig, MixtureFit};
pub use loadings::{
    estimate_loadings, estimate_loadings_from_moments, Layout, LoadingBlock, LoadingEstimates,
};

use crate::error::{Error, Result};
use crate::mixture::MixtureModel;
use crate::rng::{Slot, Streams};
use rayon::prelude::*;
use std::io::Write;

/// Latent draws on the tilde scale.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDraws {
    /// `[t][j]`, t = 0..=T.
    pub ln_theta: Vec<Vec<f64>>,
    /// `[t][j]`, t = 0..T.
    pub ln_invest: Vec<Vec<f64>>,
    pub ln_y: Vec<f64>,
}

impl LatentDraws {
    pub fn len(&self) -> usize {
        self.ln_y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ln_y.is_empty()
    }

    pub fn periods(&self) -> usize {
        self.ln_invest.len()
    }

    /// Draws from a simulated panel's true latents.
    pub fn from_panel(p: &crate::simulate::LatentPanel) -> Option<Self> {
        p.latent.as_ref().map(|l| LatentDraws {
            ln_theta: l.ln_theta.clone(),
            ln_invest: l.ln_invest.clone(),
            ln_y: p.ln_y.clone(),
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut cw = csv::Writer::from_writer(w);
        let nt = self.periods();
        let mut head: Vec<String> = (0..=nt).map(|t| format!("ln_theta_t{t}")).collect();
        head.extend((0..nt).map(|t| format!("ln_invest_t{t}")));
        head.push("lnY".into());
        cw.write_record(&head)?;
        for j in 0..self.len() {
            let row = self
                .ln_theta
                .iter()
                .chain(&self.ln_invest)
                .map(|c| c[j])
                .chain(std::iter::once(self.ln_y[j]))
                .map(|v| format!("{v:?}"));
            cw.write_record(row)?;
        }
        cw.flush()?;
        Ok(())
    }
}

/// `j` iid draws of (ln θ̃_0..T, ln Ĩ_0..T-1, ln Y).
pub fn draw_latent(mix: &MixtureModel, j: usize, seed: u64) -> Result<LatentDraws> {
    mix.validate("mixture")?;
    let d = mix.dim();
    if d < 2 || d % 2 != 0 {
        return Err(Error::invalid(
            "mixture.dim",
            "expected 2T+2 latent coordinates",
        ));
    }
    let nt = (d - 2) / 2;
    let sampler = mix.sampler()?;
    let streams = Streams::new(seed);
    let rows: Vec<Vec<f64>> = (0..j as u64)
        .into_par_iter()
        .map(|i| {
            let mut v = vec![0.0; d];
            sampler.sample_into(&mut streams.get(i, Slot::Mixture), &mut v);
            v
        })
        .collect();
    let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<f64>>();
    Ok(LatentDraws {
        ln_theta: (0..=nt).map(col).collect(),
        ln_invest: (0..nt).map(|t| col(nt + 1 + t)).collect(),
        ln_y: col(d - 1),
    })
}
