//! The data-association matrix and hypothesis likelihoods.
//!
//! Rows are the `m` returns plus a final DEATH row; columns are the `M`
//! associable objects followed by BIRTH and CLUTTER. Entries are natural
//! logarithms of per-pair likelihoods. The DEATH row only drives the
//! sampler's proposal (uniform over the objects and the "nobody dies" slot,
//! which shares the CLUTTER column); death probability enters through the
//! child prior alone.

use std::fmt::Write as _;

use nalgebra::{DMatrix, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::filter::{gaussian_log_density2, position_in_fov, update_track, GaussianTrack, SensorModel, TrackLabel, TrackUpdate};
use crate::hypothesis::{log_association_prior, Assignment, AssociationEvent};
use crate::simulator::MeasurementFrame;

/// Spatial clutter density and expected clutter count per scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClutterModel {
    /// km^-2.
    pub density_value: f64,
    pub expected_count: f64,
}

impl ClutterModel {
    /// Clutter uniform over the sensor FOV.
    pub fn uniform(sensor: &SensorModel, expected_count: f64) -> Self {
        Self {
            density_value: 1.0 / sensor.fov_area(),
            expected_count,
        }
    }

    /// No clutter at all: clutter explanations get zero likelihood.
    pub fn none() -> Self {
        Self {
            density_value: 0.0,
            expected_count: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.density_value.is_finite() && self.density_value >= 0.0) {
            return Err(invalid("clutter.density_value", "must be finite and >= 0"));
        }
        if !(self.expected_count.is_finite() && self.expected_count >= 0.0) {
            return Err(invalid("clutter.expected_count", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Marginal likelihood of `z` under the birth pdf: uniform position over the
/// FOV, so `1 / area` inside and zero outside.
pub fn birth_likelihood(z: &Vector2<f64>, sensor: &SensorModel) -> f64 {
    match position_in_fov(z, sensor) {
        Ok(true) => 1.0 / sensor.fov_area(),
        _ => 0.0,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataAssociationMatrix {
    entries: DMatrix<f64>,
    objects: Vec<TrackLabel>,
}

impl DataAssociationMatrix {
    pub fn returns(&self) -> usize {
        self.entries.nrows() - 1
    }

    pub fn objects(&self) -> &[TrackLabel] {
        &self.objects
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn birth_col(&self) -> usize {
        self.objects.len()
    }

    pub fn clutter_col(&self) -> usize {
        self.objects.len() + 1
    }

    pub fn death_row(&self) -> usize {
        self.returns()
    }

    pub fn log_entry(&self, row: usize, col: usize) -> f64 {
        self.entries[(row, col)]
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.entries[(row, col)].exp()
    }

    pub fn log_entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn column_of(&self, a: &Assignment) -> Option<usize> {
        match a {
            Assignment::Object(l) => self.objects.iter().position(|o| o == l),
            Assignment::Birth => Some(self.birth_col()),
            Assignment::Clutter => Some(self.clutter_col()),
        }
    }

    pub fn column_label(&self, col: usize) -> Assignment {
        match col.cmp(&self.objects.len()) {
            std::cmp::Ordering::Less => Assignment::Object(self.objects[col]),
            std::cmp::Ordering::Equal => Assignment::Birth,
            std::cmp::Ordering::Greater => Assignment::Clutter,
        }
    }

    pub fn column_labels(&self) -> Vec<String> {
        (0..self.ncols()).map(|c| self.column_label(c).to_string()).collect()
    }

    pub fn row_labels(&self) -> Vec<String> {
        (0..self.returns())
            .map(|i| format!("z{}", i + 1))
            .chain(std::iter::once("DEATH".to_string()))
            .collect()
    }

    /// Log entries as CSV, one row per return plus DEATH.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row");
        for c in self.column_labels() {
            out.push(',');
            out.push_str(&c);
        }
        out.push('\n');
        for (r, name) in self.row_labels().into_iter().enumerate() {
            out.push_str(&name);
            for c in 0..self.ncols() {
                let _ = write!(out, ",{}", self.entries[(r, c)]);
            }
            out.push('\n');
        }
        out
    }
}

/// The matrix together with the posterior track for every
/// (return, object) pair, stored row-major.
#[derive(Clone, Debug)]
pub struct Association {
    pub matrix: DataAssociationMatrix,
    updates: Vec<TrackUpdate>,
}

impl Association {
    pub fn update(&self, row: usize, col: usize) -> &TrackUpdate {
        &self.updates[row * self.matrix.objects.len() + col]
    }
}

/// Builds the matrix for `predicted` tracks (all of which become columns)
/// against `returns`.
pub fn build_association(
    predicted: &[GaussianTrack],
    returns: &[Vector2<f64>],
    sensor: &SensorModel,
    clutter: &ClutterModel,
) -> Result<Association> {
    let m = returns.len();
    let big_m = predicted.len();
    let updates: Vec<TrackUpdate> = (0..m * big_m)
        .into_par_iter()
        .map(|k| update_track(&predicted[k % big_m], &returns[k / big_m], sensor))
        .collect::<Result<_>>()?;
    let mut entries = DMatrix::from_element(m + 1, big_m + 2, f64::NEG_INFINITY);
    let log_clutter = clutter.density_value.ln();
    for (i, z) in returns.iter().enumerate() {
        for j in 0..big_m {
            entries[(i, j)] = updates[i * big_m + j].log_likelihood;
        }
        entries[(i, big_m)] = birth_likelihood(z, sensor).ln();
        entries[(i, big_m + 1)] = log_clutter;
    }
    let uniform = -((big_m + 1) as f64).ln();
    for j in 0..big_m {
        entries[(m, j)] = uniform;
    }
    entries[(m, big_m + 1)] = uniform;
    let matrix = DataAssociationMatrix {
        entries,
        objects: predicted.iter().map(|t| t.label).collect(),
    };
    Ok(Association { matrix, updates })
}

pub fn build_matrix(
    predicted: &[GaussianTrack],
    frame: &MeasurementFrame,
    sensor: &SensorModel,
    clutter: &ClutterModel,
) -> Result<DataAssociationMatrix> {
    build_association(predicted, &frame.returns, sensor, clutter).map(|a| a.matrix)
}

/// Log likelihood of `event`: the sum of the selected log entries. Deaths
/// contribute nothing.
pub fn hypothesis_likelihood(event: &AssociationEvent, matrix: &DataAssociationMatrix) -> Result<f64> {
    if event.assignments.len() != matrix.returns() {
        return Err(Error::InvalidEvent(format!(
            "event has {} assignments, matrix has {} returns",
            event.assignments.len(),
            matrix.returns()
        )));
    }
    let mut total = 0.0;
    for (i, a) in event.assignments.iter().enumerate() {
        let col = matrix
            .column_of(a)
            .ok_or_else(|| Error::InvalidEvent(format!("no column for {a}")))?;
        total += matrix.log_entry(i, col);
    }
    Ok(total)
}

/// Log values of the classical MHT association likelihood and its
/// hypothesis-level counterpart for the same event.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LikelihoodComparison {
    pub log_eta_mht: f64,
    pub log_eta_hfisst: f64,
}

impl LikelihoodComparison {
    pub fn ratio(&self) -> f64 {
        (self.log_eta_hfisst - self.log_eta_mht).exp()
    }
}

/// MHT evaluates each detected return at the track mean with noise `R` only;
/// the hypothesis-level form uses the marginal (innovation) densities from
/// the matrix and the association prior. `tracks` must be the matrix columns.
pub fn compare_mht_hfisst(
    event: &AssociationEvent,
    tracks: &[GaussianTrack],
    returns: &[Vector2<f64>],
    matrix: &DataAssociationMatrix,
    sensor: &SensorModel,
) -> Result<LikelihoodComparison> {
    if event.births() > 0 || !event.deaths.is_empty() {
        return Err(Error::InvalidEvent("comparison needs an event without births or deaths".into()));
    }
    if returns.len() != matrix.returns() || tracks.len() != matrix.objects().len() {
        return Err(Error::InvalidEvent("tracks or returns do not match the matrix".into()));
    }
    let big_m = tracks.len();
    let m = returns.len();
    let k = event.associated();
    let p_d = sensor.p_d;
    let mut mht = if k > 0 { k as f64 * p_d.ln() } else { 0.0 };
    if big_m > k {
        mht += (big_m - k) as f64 * (1.0 - p_d).ln();
    }
    let mut hfisst = log_association_prior(big_m, m, k, p_d)?;
    for (i, a) in event.assignments.iter().enumerate() {
        let col = matrix
            .column_of(a)
            .ok_or_else(|| Error::InvalidEvent(format!("no column for {a}")))?;
        hfisst += matrix.log_entry(i, col);
        mht += match a {
            Assignment::Object(_) => gaussian_log_density2(&returns[i], &tracks[col].mean.position(), &sensor.r)?,
            _ => matrix.log_entry(i, col),
        };
    }
    Ok(LikelihoodComparison {
        log_eta_mht: mht,
        log_eta_hfisst: hfisst,
    })
}
