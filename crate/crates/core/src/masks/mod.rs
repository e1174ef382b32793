//! Time-frequency masks: oracle binary masks from ground truth and
//! unsupervised cACGMM spatial clustering.

mod align;
mod cacgmm;

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::stft::ComplexSpectrogram;
use crate::tensor_io::{Tensor, TensorData};

pub use align::{align_frequency_permutations, Alignment};
pub use cacgmm::{
    cacg_log_density, cacgmm_em, cacgmm_em_from_posteriors, dirichlet_posteriors, CacgmmConfig, CacgmmState,
};

/// Soft or binary masks `[class, frame, bin]`. By convention the last class
/// is noise.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    masks: Array3<f64>,
}

impl MaskSet {
    pub fn new(masks: Array3<f64>) -> Result<Self> {
        if masks.dim().0 == 0 {
            return Err(Error::Empty("mask set has no classes".into()));
        }
        if masks.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::config("mask values must lie in [0, 1]"));
        }
        Ok(Self { masks })
    }

    pub fn masks(&self) -> &Array3<f64> {
        &self.masks
    }

    pub fn into_masks(self) -> Array3<f64> {
        self.masks
    }

    pub fn num_classes(&self) -> usize {
        self.masks.dim().0
    }

    pub fn num_frames(&self) -> usize {
        self.masks.dim().1
    }

    pub fn num_bins(&self) -> usize {
        self.masks.dim().2
    }

    /// `[frame, bin]` mask of one class.
    pub fn class(&self, c: usize) -> ArrayView2<'_, f64> {
        self.masks.index_axis(Axis(0), c)
    }

    /// Sum of the masks of `classes`, clipped to 1.
    pub fn combined(&self, classes: &[usize]) -> Result<Array2<f64>> {
        let mut acc = Array2::zeros((self.num_frames(), self.num_bins()));
        for &c in classes {
            if c >= self.num_classes() {
                return Err(Error::shape(format!("class {c} out of range")));
            }
            acc += &self.class(c);
        }
        Ok(acc.mapv(|v: f64| v.min(1.0)))
    }

    /// Largest deviation of `Σ_c mask_c` from 1.
    pub fn normalization_error(&self) -> f64 {
        self.masks
            .sum_axis(Axis(0))
            .iter()
            .fold(0.0, |m, s| f64::max(m, (s - 1.0).abs()))
    }

    /// Output class `k` takes input class `order[k]`.
    pub fn reorder(&self, order: &[usize]) -> Result<Self> {
        let c = self.num_classes();
        let mut seen = vec![false; c];
        if order.len() != c || order.iter().any(|&k| k >= c || std::mem::replace(&mut seen[k], true)) {
            return Err(Error::config(format!("{order:?} is not a permutation of {c} classes")));
        }
        let mut out = Array3::zeros(self.masks.dim());
        for (k, &src) in order.iter().enumerate() {
            out.index_axis_mut(Axis(0), k).assign(&self.class(src));
        }
        Ok(Self { masks: out })
    }

    /// Moves class `noise` to the last position, keeping the others in order.
    pub fn with_noise_last(&self, noise: usize) -> Result<Self> {
        let c = self.num_classes();
        if noise >= c {
            return Err(Error::config(format!(
                "noise class {noise} out of range for {c} classes"
            )));
        }
        let order: Vec<usize> = (0..c).filter(|&k| k != noise).chain([noise]).collect();
        self.reorder(&order)
    }

    /// float-32 tensor `[C, T, F]`.
    pub fn to_tensor(&self) -> Tensor {
        let (c, t, f) = self.masks.dim();
        Tensor::new(
            vec![c, t, f],
            TensorData::F32(self.masks.iter().map(|&v| v as f32).collect()),
        )
        .expect("dims match payload")
        .with_meta("kind", "masks")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [c, tt, f] = t.dims[..] else {
            return Err(Error::TensorFormat("mask tensor must be 3-D".into()));
        };
        let values: Vec<f64> = match &t.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            _ => return Err(Error::TensorFormat("mask tensor must be real".into())),
        };
        let masks = Array3::from_shape_vec((c, tt, f), values).map_err(|e| Error::TensorFormat(e.to_string()))?;
        Self::new(masks)
    }

    /// One grayscale PNG per class (`mask_<c>.png`), time left to right,
    /// frequency increasing upwards.
    pub fn save_png(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let (_, t, f) = self.masks.dim();
        let mut out = Vec::new();
        for c in 0..self.num_classes() {
            let img = image::GrayImage::from_fn(t as u32, f as u32, |x, y| {
                let v = self.masks[[c, x as usize, f - 1 - y as usize]];
                image::Luma([(v * 255.0).round() as u8])
            });
            let p = dir.join(format!("mask_{c}.png"));
            img.save(&p)?;
            out.push(p);
        }
        Ok(out)
    }
}

/// One-hot masks selecting, per bin, the class with the largest
/// multichannel power. Ties go to the lower class index.
pub fn ideal_binary_mask(classes: &[ComplexSpectrogram]) -> Result<MaskSet> {
    if classes.len() < 2 {
        return Err(Error::config("ideal binary mask needs at least two classes"));
    }
    let dim = classes[0].data().dim();
    if classes.iter().any(|c| c.data().dim() != dim) {
        return Err(Error::shape("class spectrograms differ in shape"));
    }
    let (t, f, _) = dim;
    let powers: Vec<Array2<f64>> = classes.iter().map(ComplexSpectrogram::power).collect();
    let mut masks = Array3::zeros((classes.len(), t, f));
    for ti in 0..t {
        for fi in 0..f {
            let mut best = 0;
            for c in 1..classes.len() {
                if powers[c][[ti, fi]] > powers[best][[ti, fi]] {
                    best = c;
                }
            }
            masks[[best, ti, fi]] = 1.0;
        }
    }
    MaskSet::new(masks)
}

/// Per-class temporal activity `[class, frame]`: the mask averaged over
/// frequency.
pub fn activity_profiles(masks: &MaskSet) -> Array2<f64> {
    masks.masks().mean_axis(Axis(2)).expect("masks have at least one bin")
}

/// Index of the class whose temporal activity profile has the lowest
/// coefficient of variation.
pub fn flattest_class(masks: &MaskSet) -> usize {
    let prof = activity_profiles(masks);
    let cv = |row: ndarray::ArrayView1<f64>| {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        if mean <= 0.0 {
            return f64::INFINITY;
        }
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        var.sqrt() / mean
    };
    let mut best = 0;
    let mut best_cv = f64::INFINITY;
    for (c, row) in prof.rows().into_iter().enumerate() {
        let v = cv(row);
        if v < best_cv {
            best = c;
            best_cv = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::StftConfig;
    use num_complex::Complex64;

    fn spec_from(data: Array3<Complex64>) -> ComplexSpectrogram {
        ComplexSpectrogram::new(data, StftConfig::new(4, 2), 8000).unwrap()
    }

    #[test]
    fn silent_class_gets_nothing() {
        let zero = spec_from(Array3::zeros((5, 3, 2)));
        let one = spec_from(Array3::from_elem((5, 3, 2), Complex64::new(0.1, 0.0)));
        let m = ideal_binary_mask(&[zero, one]).unwrap();
        assert!(m.class(0).iter().all(|&v| v == 0.0));
        assert!(m.class(1).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ties_go_to_lower_index() {
        let a = spec_from(Array3::from_elem((2, 3, 1), Complex64::new(0.0, 1.0)));
        let b = spec_from(Array3::from_elem((2, 3, 1), Complex64::new(1.0, 0.0)));
        let m = ideal_binary_mask(&[a, b]).unwrap();
        assert!(m.class(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn shape_mismatch_and_single_class_rejected() {
        let a = spec_from(Array3::zeros((2, 3, 1)));
        let b = spec_from(Array3::zeros((3, 3, 1)));
        assert!(ideal_binary_mask(&[a.clone(), b]).is_err());
        assert!(ideal_binary_mask(&[a]).is_err());
    }

    #[test]
    fn reorder_and_noise_last() {
        let mut raw = Array3::zeros((3, 1, 1));
        raw[[0, 0, 0]] = 0.1;
        raw[[1, 0, 0]] = 0.2;
        raw[[2, 0, 0]] = 0.7;
        let m = MaskSet::new(raw).unwrap();
        let n = m.with_noise_last(0).unwrap();
        assert_eq!(n.masks().iter().copied().collect::<Vec<_>>(), vec![0.2, 0.7, 0.1]);
        assert!(m.reorder(&[0, 0, 1]).is_err());
    }

    #[test]
    fn flattest_profile_is_noise() {
        let mut raw = Array3::zeros((2, 10, 2));
        for t in 0..10 {
            let speech = if t % 3 == 0 { 0.9 } else { 0.2 };
            for f in 0..2 {
                raw[[0, t, f]] = speech;
                raw[[1, t, f]] = 1.0 - speech;
            }
        }
        // equal spread, class 1 has the larger mean
        assert_eq!(flattest_class(&MaskSet::new(raw).unwrap()), 1);
    }

    #[test]
    fn tensor_round_trip_and_png() {
        let raw = Array3::from_shape_fn((2, 4, 3), |(c, t, f)| if (c + t + f) % 2 == 0 { 1.0 } else { 0.0 });
        let m = MaskSet::new(raw).unwrap();
        let back = MaskSet::from_tensor(&m.to_tensor()).unwrap();
        assert_eq!(back, m);
        let dir = tempfile::tempdir().unwrap();
        let files = m.save_png(dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        let img = image::open(&files[0]).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (4, 3));
        // bottom-left pixel is frame 0, bin 0
        assert_eq!(img.get_pixel(0, 2).0[0], 255);
    }
}
