//! Wavelength grids for spectrally resolved weight measurements.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Speed of light in nm·GHz.
const SPEED_OF_LIGHT_NM_GHZ: f64 = 299_792_458.0;

/// Reference wavelength at which phase coefficients are quoted.
pub const REFERENCE_WAVELENGTH_NM: f64 = 1550.0;

/// A sorted set of spectral channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavelengthGrid {
    pub n_channels: usize,
    pub center_wavelengths_nm: Vec<f64>,
    pub channel_spacing_ghz: f64,
    /// Channel used as the single-wavelength reference (λ_c).
    pub reference_index: usize,
}

impl WavelengthGrid {
    /// The 50 GHz ITU DWDM grid over the C-band: 100 channels from 196.15 THz
    /// down to 191.20 THz, ordered by increasing wavelength.
    ///
    /// Channels 50..60 form the band centered closest to 1550 nm, so a 10x
    /// band integration puts λ₆ at 1549.9 nm.
    pub fn itu_c_band() -> Self {
        let spacing = 50.0;
        let wavelengths: Vec<f64> = (0..100)
            .map(|k| {
                let f_ghz = 193_450.0 + (54.0 - k as f64) * spacing;
                SPEED_OF_LIGHT_NM_GHZ / f_ghz
            })
            .collect();
        let reference_index = nearest(&wavelengths, REFERENCE_WAVELENGTH_NM);
        Self {
            n_channels: wavelengths.len(),
            center_wavelengths_nm: wavelengths,
            channel_spacing_ghz: spacing,
            reference_index,
        }
    }

    /// A one-channel grid.
    pub fn single(lambda_nm: f64, spacing_ghz: f64) -> Self {
        Self {
            n_channels: 1,
            center_wavelengths_nm: vec![lambda_nm],
            channel_spacing_ghz: spacing_ghz,
            reference_index: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_channels >= 1, "wavelength grid has no channels");
        ensure!(
            self.center_wavelengths_nm.len() == self.n_channels,
            "grid lists {} wavelengths for {} channels",
            self.center_wavelengths_nm.len(),
            self.n_channels
        );
        ensure!(
            self.center_wavelengths_nm.windows(2).all(|w| w[0] < w[1]),
            "grid wavelengths must be strictly increasing"
        );
        ensure!(
            self.center_wavelengths_nm.iter().all(|&l| l > 0.0 && l.is_finite()),
            "grid wavelengths must be positive"
        );
        ensure!(
            self.reference_index < self.n_channels,
            "reference index {} outside grid of {} channels",
            self.reference_index,
            self.n_channels
        );
        Ok(())
    }

    pub fn reference_wavelength_nm(&self) -> f64 {
        self.center_wavelengths_nm[self.reference_index]
    }

    /// Grid obtained by merging groups of `factor` adjacent channels.
    pub fn downsampled(&self, factor: usize) -> Result<Self> {
        ensure!(factor >= 1, "band factor must be at least 1");
        ensure!(
            self.n_channels % factor == 0,
            "{} channels are not divisible into bands of {}",
            self.n_channels,
            factor
        );
        let centers: Vec<f64> = self
            .center_wavelengths_nm
            .chunks(factor)
            .map(|band| band.iter().sum::<f64>() / factor as f64)
            .collect();
        Ok(Self {
            n_channels: centers.len(),
            center_wavelengths_nm: centers,
            channel_spacing_ghz: self.channel_spacing_ghz * factor as f64,
            reference_index: self.reference_index / factor,
        })
    }

    /// The grid restricted to one channel.
    pub fn channel(&self, k: usize) -> Self {
        Self::single(self.center_wavelengths_nm[k], self.channel_spacing_ghz)
    }

    /// Index of the channel whose center is closest to `lambda_nm`.
    pub fn nearest_index(&self, lambda_nm: f64) -> usize {
        nearest(&self.center_wavelengths_nm, lambda_nm)
    }

    /// Min-max normalization of a channel's wavelength onto [-1, 1].
    pub fn normalized(&self, k: usize) -> f64 {
        let lo = self.center_wavelengths_nm[0];
        let hi = self.center_wavelengths_nm[self.n_channels - 1];
        if hi > lo {
            2.0 * (self.center_wavelengths_nm[k] - lo) / (hi - lo) - 1.0
        } else {
            0.0
        }
    }
}

fn nearest(values: &[f64], target: f64) -> usize {
    values
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}
